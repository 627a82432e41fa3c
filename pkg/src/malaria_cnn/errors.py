"""Exception hierarchy shared across the package."""


class MalariaCNNError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(MalariaCNNError, ValueError):
    pass


class ConfigError(MalariaCNNError, ValueError):
    pass


class NumericError(MalariaCNNError, ArithmeticError):
    pass


class DivergenceError(NumericError):
    """Raised when a training loss becomes NaN or infinite."""

    def __init__(self, batch_index: int, loss: float):
        super().__init__(f"loss diverged to {loss!r} at batch {batch_index}")
        self.batch_index = batch_index
        self.loss = loss


class LabelError(MalariaCNNError, ValueError):
    pass


class LayoutError(MalariaCNNError, FileNotFoundError):
    pass


class UndefinedMetricError(MalariaCNNError, ValueError):
    pass


class CheckpointFormatError(MalariaCNNError, ValueError):
    """Malformed checkpoint file; ``offset`` is the byte position where parsing failed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset
