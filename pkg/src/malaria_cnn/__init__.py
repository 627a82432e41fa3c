"""From-scratch CNN engine and malaria blood-cell classification pipeline."""
from .errors import (CheckpointFormatError, ConfigError, DivergenceError, LabelError, LayoutError,
                     MalariaCNNError, NumericError, ShapeError, UndefinedMetricError)
from .graph import Model, ParamCount
from .zoo import REGISTRY, build

__version__ = "0.1.0"
