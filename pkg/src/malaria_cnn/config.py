"""Flat ``key = value`` run configuration with dotted keys and ``#`` comments."""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable

from .errors import ConfigError


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _fraction(text: str) -> Fraction:
    value = Fraction(text.strip())
    if value <= 0:
        raise ValueError("must be positive")
    return value


def _optional_bool(text: str):
    return None if text.strip().lower() in ("", "auto", "none") else _bool(text)


def _optional_str(text: str):
    return text.strip() or None


def _names(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise ValueError("must be >= 1")
    return v


def _non_negative_int(text: str) -> int:
    v = int(text)
    if v < 0:
        raise ValueError("must be >= 0")
    return v


ALL_ARCHS = "densenet121,vgg19,alexnet,custom_cnn,res_attention,xception"

# key -> (parser, default text)
SCHEMA: dict[str, tuple[Callable[[str], Any], str]] = {
    "model.arch": (str, "custom_cnn"),
    "model.scale": (_fraction, "1/4"),
    "model.input_size": (_positive_int, "64"),
    "model.head_only_trainable": (_optional_bool, "auto"),
    "model.dtype": (str, "float32"),
    "train.learning_rate": (float, "0.001"),
    "train.batch_size": (_positive_int, "32"),
    "train.epochs": (_non_negative_int, "10"),
    "train.adam_beta1": (float, "0.9"),
    "train.adam_beta2": (float, "0.999"),
    "train.adam_eps": (float, "1e-8"),
    "train.seed": (int, "0"),
    "train.deterministic": (_bool, "true"),
    "train.resume": (_optional_str, ""),
    "data.root": (_optional_str, ""),
    "data.synthetic": (_non_negative_int, "0"),
    "data.fraction": (float, "1.0"),
    "data.split_seed": (int, "0"),
    "data.workers": (_positive_int, "4"),
    "run.out": (str, "runs/latest"),
    "compare.archs": (_names, ALL_ARCHS),
    "compare.parallel": (_bool, "false"),
}


@dataclass
class RunConfig:
    """Resolved configuration; ``raw`` keeps each value's text and ``source`` where it came from."""

    raw: dict[str, str] = field(default_factory=dict)
    source: dict[str, str] = field(default_factory=dict)

    def __getitem__(self, key: str):
        parser, _ = SCHEMA[key]
        return parser(self.raw[key])

    def get(self, key: str):
        return self[key]

    def data_root(self) -> str | None:
        return self["data.root"] or os.environ.get("MALARIA_DATA_DIR") or None

    def items(self):
        return [(k, self.raw[k]) for k in SCHEMA]


def parse_config_text(text: str, origin: str = "<config>") -> dict[str, str]:
    """Parse ``key = value`` lines; errors name the offending line number."""
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value', got {line.strip()!r}")
        key, value = (s.strip() for s in stripped.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{origin}:{lineno}: unknown key {key!r}")
        try:
            SCHEMA[key][0](value)
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"{origin}:{lineno}: bad value for {key}: {exc}") from None
        values[key] = value
    return values


def resolve(file_path: str | os.PathLike | None = None, overrides: dict[str, str] | None = None) -> RunConfig:
    """Merge defaults < config file < command-line overrides."""
    cfg = RunConfig()
    for key, (_, default) in SCHEMA.items():
        cfg.raw[key] = default
        cfg.source[key] = "default"
    if file_path is not None:
        path = Path(file_path)
        if not path.is_file():
            raise ConfigError(f"config file {path} not found")
        for key, value in parse_config_text(path.read_text(encoding="utf-8"), str(path)).items():
            cfg.raw[key] = value
            cfg.source[key] = "file"
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}")
        try:
            SCHEMA[key][0](str(value))
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from None
        cfg.raw[key] = str(value)
        cfg.source[key] = "flag"
    return cfg
