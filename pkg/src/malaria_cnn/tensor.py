"""Dense tensor primitives.

Tensors are plain ``numpy.ndarray`` values in row-major order. Activations
use the batch-first, channels-last layout ``[batch, height, width, channels]``.
The helpers here add the loud shape checking the layers rely on: broadcasting
is only allowed along a trailing channel axis.
"""
from __future__ import annotations

import contextlib
from typing import Iterable, Sequence

import numpy as np

from .errors import ShapeError

DEFAULT_DTYPE = np.float32

_deterministic = True


def set_deterministic(flag: bool) -> None:
    global _deterministic
    _deterministic = bool(flag)


def is_deterministic() -> bool:
    return _deterministic


@contextlib.contextmanager
def deterministic_threads():
    """Pin BLAS to a single thread while the deterministic flag is on."""
    if not _deterministic:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=1):
        yield


def _check_shape(shape: Sequence[int]) -> tuple[int, ...]:
    shape = tuple(int(s) for s in shape)
    if len(shape) == 0:
        raise ShapeError("shape must have at least one extent")
    if any(s < 1 for s in shape):
        raise ShapeError(f"extents must be >= 1, got {shape}")
    return shape


def tensor_new(shape: Sequence[int], fill=0.0, dtype=DEFAULT_DTYPE) -> np.ndarray:
    """Create a tensor of ``shape`` from a scalar fill or a flat/nested value list."""
    shape = _check_shape(shape)
    if np.isscalar(fill):
        return np.full(shape, fill, dtype=dtype)
    values = np.asarray(fill, dtype=dtype).ravel()
    expected = int(np.prod(shape))
    if values.size != expected:
        raise ShapeError(f"{values.size} values cannot fill shape {shape} ({expected} elements)")
    return values.reshape(shape).copy()


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner extents differ: {a.shape} x {b.shape}")
    return a @ b


def _broadcastable(a: np.ndarray, b: np.ndarray) -> bool:
    if a.shape == b.shape:
        return True
    # b may omit leading axes but must match a's trailing channel axis exactly
    return b.ndim == 1 and a.ndim >= 1 and b.shape[0] == a.shape[-1]


_OPS = {"add": np.add, "sub": np.subtract, "mul": np.multiply}


def elementwise(op: str, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if op not in _OPS:
        raise ValueError(f"unknown elementwise op {op!r}")
    a = np.asarray(a)
    b = np.asarray(b)
    if not _broadcastable(a, b):
        raise ShapeError(f"cannot combine shapes {a.shape} and {b.shape}")
    return _OPS[op](a, b)


def reduce(op: str, t: np.ndarray, axes: Iterable[int] | None = None) -> np.ndarray:
    """Reduce ``t`` over ``axes`` (all axes when None), accumulating in float64.

    An empty axis set returns the input unchanged.
    """
    t = np.asarray(t)
    if axes is None:
        axes = tuple(range(t.ndim))
    axes = tuple(sorted(set(int(a) for a in axes)))
    for a in axes:
        if not -t.ndim <= a < t.ndim:
            raise ShapeError(f"axis {a} out of range for rank {t.ndim}")
    axes = tuple(sorted(a % t.ndim for a in axes))
    if not axes:
        return t.copy()
    if op == "sum":
        out = np.sum(t, axis=axes, dtype=np.float64)
    elif op == "mean":
        out = np.sum(t, axis=axes, dtype=np.float64) / np.prod([t.shape[a] for a in axes])
    elif op == "max":
        out = np.max(t, axis=axes)
    else:
        raise ValueError(f"unknown reduction {op!r}")
    return np.asarray(out).astype(t.dtype if t.dtype.kind == "f" else np.float64)


def reshape(t: np.ndarray, new_shape: Sequence[int]) -> np.ndarray:
    new_shape = _check_shape(new_shape)
    if int(np.prod(new_shape)) != t.size:
        raise ShapeError(f"cannot reshape {t.shape} ({t.size} elements) to {new_shape}")
    return np.reshape(t, new_shape)


def flatten(t: np.ndarray) -> np.ndarray:
    """Flatten everything but the leading batch axis."""
    return reshape(t, (t.shape[0], int(np.prod(t.shape[1:]))))
