"""Binary checkpoint format (little-endian).

Layout::

    b"MALC" | version u32 | name_len u16 | name utf-8 | scale f64
    | model tensor count u32 | model records
    | optimizer tensor count u32 | optimizer records
    | crc32 u32 of every preceding byte

    record = name_len u16 | name utf-8 | dtype u8 (0=f32, 1=f64) | rank u8
             | extents u32 * rank | raw row-major data

Model records are every parameter and batchnorm statistic (``node/name``).
Optimizer records carry Adam's moments (``adam/m/<key>``, ``adam/v/<key>``),
its step counter and hyperparameters, plus ``meta/*`` scalars: epoch, RNG
step, input shape and the frozen-backbone flag needed to rebuild the model.
"""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointFormatError, ConfigError
from .graph import Model
from .report import atomic_write
from .train import Adam

MAGIC = b"MALC"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


@dataclass
class Checkpoint:
    version: int
    model_name: str
    scale: float
    tensors: dict[str, np.ndarray]
    optimizer: dict[str, np.ndarray] = field(default_factory=dict)

    def meta(self, key: str, default=None):
        v = self.optimizer.get(f"meta/{key}")
        return default if v is None else v

    @property
    def epoch(self) -> int:
        return int(self.meta("epoch", [0])[0])

    @property
    def input_shape(self) -> tuple[int, ...]:
        return tuple(int(v) for v in self.meta("input_shape"))

    @property
    def head_only_trainable(self) -> bool:
        return bool(self.meta("head_only_trainable", [0])[0])

    def restore(self, model: Model, optimizer: Adam | None = None) -> None:
        if model.name != self.model_name:
            raise ConfigError(f"checkpoint holds {self.model_name!r}, model is {model.name!r}")
        model.load_tensors(self.tensors)
        if optimizer is None:
            return
        optimizer.t = int(self.optimizer["adam/t"][0])
        optimizer.learning_rate = float(self.optimizer["adam/learning_rate"][0])
        optimizer.beta1 = float(self.optimizer["adam/beta1"][0])
        optimizer.beta2 = float(self.optimizer["adam/beta2"][0])
        optimizer.eps = float(self.optimizer["adam/eps"][0])
        optimizer.m = {k[len("adam/m/"):]: v.copy() for k, v in self.optimizer.items() if k.startswith("adam/m/")}
        optimizer.v = {k[len("adam/v/"):]: v.copy() for k, v in self.optimizer.items() if k.startswith("adam/v/")}


def _scalar(v) -> np.ndarray:
    return np.array([v], dtype=np.float64)


def _encode_records(buf: bytearray, tensors: dict[str, np.ndarray]) -> None:
    buf += struct.pack("<I", len(tensors))
    for name, t in tensors.items():
        t = np.asarray(t)
        if t.dtype not in _CODES:
            raise ValueError(f"{name}: unsupported dtype {t.dtype}")
        raw_name = name.encode("utf-8")
        buf += struct.pack("<H", len(raw_name)) + raw_name
        buf += struct.pack("<BB", _CODES[t.dtype], t.ndim)
        buf += struct.pack(f"<{t.ndim}I", *t.shape)
        buf += np.ascontiguousarray(t, dtype=_DTYPES[_CODES[t.dtype]]).tobytes()


def encode_checkpoint(model: Model, optimizer: Adam | None = None, epoch: int = 0) -> bytes:
    buf = bytearray(MAGIC)
    buf += struct.pack("<I", VERSION)
    name = model.name.encode("utf-8")
    buf += struct.pack("<H", len(name)) + name
    buf += struct.pack("<d", model.scale)
    _encode_records(buf, model.tensors())

    opt: dict[str, np.ndarray] = {}
    if optimizer is not None:
        opt["adam/t"] = _scalar(optimizer.t)
        opt["adam/learning_rate"] = _scalar(optimizer.learning_rate)
        opt["adam/beta1"] = _scalar(optimizer.beta1)
        opt["adam/beta2"] = _scalar(optimizer.beta2)
        opt["adam/eps"] = _scalar(optimizer.eps)
        for k in optimizer.m:
            opt[f"adam/m/{k}"] = optimizer.m[k]
            opt[f"adam/v/{k}"] = optimizer.v[k]
    opt["meta/epoch"] = _scalar(epoch)
    opt["meta/rng_step"] = _scalar(optimizer.t if optimizer is not None else 0)
    opt["meta/input_shape"] = np.array(model.input_shape, dtype=np.float64)
    opt["meta/head_only_trainable"] = _scalar(int(bool(model.metadata.get("head_only_trainable", False))))
    _encode_records(buf, opt)
    buf += struct.pack("<I", zlib.crc32(bytes(buf)))
    return bytes(buf)


def save_checkpoint(path, model: Model, optimizer: Adam | None = None, epoch: int = 0) -> Path:
    """Write atomically (temp file then rename)."""
    atomic_write(path, encode_checkpoint(model, optimizer, epoch))
    return Path(path)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointFormatError(f"truncated file while reading {what}", self.pos)
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def records(self, section: str) -> dict[str, np.ndarray]:
        (count,) = self.unpack("<I", f"{section} tensor count")
        out = {}
        for _ in range(count):
            start = self.pos
            (nlen,) = self.unpack("<H", "tensor name length")
            try:
                name = self.take(nlen, "tensor name").decode("utf-8")
            except UnicodeDecodeError:
                raise CheckpointFormatError("tensor name is not valid UTF-8", start + 2) from None
            code_pos = self.pos
            code, rank = self.unpack("<BB", f"{name}: dtype/rank")
            if code not in _DTYPES:
                raise CheckpointFormatError(f"{name}: unknown dtype code {code}", code_pos)
            shape = self.unpack(f"<{rank}I", f"{name}: extents")
            dt = _DTYPES[code]
            raw = self.take(int(np.prod(shape, dtype=np.int64)) * dt.itemsize, f"{name}: data")
            out[name] = np.frombuffer(raw, dtype=dt).reshape(shape).astype(dt.newbyteorder("="))
        return out


def decode_checkpoint(data: bytes) -> Checkpoint:
    r = _Reader(data)
    if r.take(4, "magic") != MAGIC:
        raise CheckpointFormatError("bad magic bytes, not a checkpoint", 0)
    (version,) = r.unpack("<I", "format version")
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported format version {version}", 4)
    (nlen,) = r.unpack("<H", "model name length")
    name = r.take(nlen, "model name").decode("utf-8", errors="replace")
    (scale,) = r.unpack("<d", "scale")
    tensors = r.records("model")
    optimizer = r.records("optimizer")
    crc_pos = r.pos
    (crc,) = r.unpack("<I", "crc32")
    if crc != zlib.crc32(data[:crc_pos]):
        raise CheckpointFormatError("CRC32 mismatch", crc_pos)
    if r.pos != len(data):
        raise CheckpointFormatError("trailing bytes after CRC32", r.pos)
    return Checkpoint(version, name, scale, tensors, optimizer)


def load_checkpoint(path) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes())
