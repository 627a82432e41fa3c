"""Differentiable layer primitives with hand-written backward passes.

Every layer works on channels-last batches ``[B, H, W, C]`` (or ``[B, n]`` for
dense layers). ``forward`` records what ``backward`` needs on a per-layer tape;
``backward`` consumes that tape, stores parameter gradients in ``self.grads``
and returns one input gradient per forward input.

Shapes handed to ``output_shape`` and ``build`` are per-sample, i.e. without
the batch axis.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import ConfigError, MalariaCNNError, ShapeError
from . import tensor as T


class TapeError(MalariaCNNError, RuntimeError):
    pass


@dataclass
class Context:
    """Forward-pass mode plus the coordinates of the counter-based RNG stream.

    Stochastic layers draw from Philox keyed on ``seed`` with the counter set
    from ``(stream, step)``, so a given training step always replays the same
    dropout masks.
    """

    train: bool = False
    seed: int = 0
    step: int = 0

    def rng(self, stream: int) -> np.random.Generator:
        key = self.seed & 0xFFFFFFFFFFFFFFFF
        return np.random.Generator(np.random.Philox(key=key, counter=[0, 0, stream, self.step]))


INFER = Context(train=False)


def _clamp_limit(dtype) -> float:
    return 60.0 if np.dtype(dtype) == np.float64 else 30.0


def _sum64(a: np.ndarray, axis) -> np.ndarray:
    return np.sum(a, axis=axis, dtype=np.float64).astype(a.dtype)


def conv_output_extent(size: int, kernel: int, stride: int, padding: str) -> tuple[int, int, int]:
    """Return ``(out, pad_before, pad_after)`` for one spatial axis.

    ``same`` follows the ceil(size / stride) convention, putting any odd
    padding element on the bottom/right.
    """
    if padding == "valid":
        if kernel > size:
            raise ShapeError(f"kernel {kernel} larger than input extent {size}")
        return (size - kernel) // stride + 1, 0, 0
    if padding == "same":
        out = -(-size // stride)
        total = max((out - 1) * stride + kernel - size, 0)
        return out, total // 2, total - total // 2
    raise ConfigError(f"unknown padding mode {padding!r}")


def _windows(xp: np.ndarray, k: int, s: int, oh: int, ow: int) -> np.ndarray:
    """Read-only view [B, oh, ow, k, k, C] of every k x k window of a padded batch."""
    b, _, _, c = xp.shape
    sb, sh, sw, sc = xp.strides
    return as_strided(xp, (b, oh, ow, k, k, c), (sb, sh * s, sw * s, sh, sw, sc), writeable=False)


def _he_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    limit = math.sqrt(6.0 / max(fan_in, 1))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Layer:
    kind = "layer"
    n_inputs = 1

    def __init__(self, trainable: bool = True):
        self.trainable = trainable
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.state: dict[str, np.ndarray] = {}
        self.stream = 0
        self._tape = None

    def output_shape(self, *shapes: tuple) -> tuple:
        raise NotImplementedError

    def build(self, *shapes: tuple, rng: np.random.Generator, dtype=T.DEFAULT_DTYPE) -> None:
        """Allocate parameters for the given per-sample input shapes."""

    def config(self) -> dict:
        return {}

    def forward(self, *xs: np.ndarray, ctx: Context = INFER) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, ...]:
        raise NotImplementedError

    def _record(self, out: np.ndarray, payload) -> np.ndarray:
        self._tape = (out.shape, payload)
        return out

    def _pop_tape(self, grad: np.ndarray):
        """Consume the tape; backward runs at most once per forward."""
        if self._tape is None:
            raise TapeError(f"{self.kind}: backward called without a matching forward")
        (out_shape, payload), self._tape = self._tape, None
        if grad.shape != out_shape:
            raise ShapeError(f"{self.kind}: gradient shape {grad.shape} != output shape {out_shape}")
        return payload

    def param_count(self) -> tuple[int, int]:
        """(trainable, non_trainable) element counts."""
        n_params = sum(p.size for p in self.params.values())
        n_state = sum(s.size for s in self.state.values())
        if self.trainable:
            return n_params, n_state
        return 0, n_params + n_state

    def astype(self, dtype) -> None:
        for d in (self.params, self.state):
            for k in d:
                d[k] = d[k].astype(dtype)

    def __repr__(self):
        cfg = ", ".join(f"{k}={v}" for k, v in self.config().items())
        return f"{type(self).__name__}({cfg})"


class Conv2D(Layer):
    kind = "conv2d"

    def __init__(self, filters: int, kernel: int, stride: int = 1, padding: str = "valid",
                 use_bias: bool = True, trainable: bool = True):
        super().__init__(trainable)
        if filters < 1 or kernel < 1 or stride < 1:
            raise ConfigError("filters, kernel and stride must be positive")
        self.filters, self.kernel, self.stride = filters, kernel, stride
        self.padding, self.use_bias = padding, use_bias

    def config(self):
        return {"filters": self.filters, "kernel": self.kernel, "stride": self.stride,
                "padding": self.padding, "use_bias": self.use_bias}

    def output_shape(self, shape):
        if len(shape) != 3:
            raise ShapeError(f"conv2d expects [H, W, C] inputs, got {shape}")
        h, w, _ = shape
        oh = conv_output_extent(h, self.kernel, self.stride, self.padding)[0]
        ow = conv_output_extent(w, self.kernel, self.stride, self.padding)[0]
        return (oh, ow, self.filters)

    def build(self, shape, rng, dtype=T.DEFAULT_DTYPE):
        cin = shape[-1]
        k = self.kernel
        self.params["kernel"] = _he_uniform(rng, (k, k, cin, self.filters), k * k * cin, dtype)
        if self.use_bias:
            self.params["bias"] = np.zeros(self.filters, dtype=dtype)

    def _pad(self, x):
        _, h, w, _ = x.shape
        oh, pt, pb = conv_output_extent(h, self.kernel, self.stride, self.padding)
        ow, pl, pr = conv_output_extent(w, self.kernel, self.stride, self.padding)
        if pt or pb or pl or pr:
            x = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
        return x, oh, ow, (pt, pl)

    def forward(self, x, ctx=INFER):
        w = self.params["kernel"]
        if x.ndim != 4 or x.shape[-1] != w.shape[2]:
            raise ShapeError(f"conv2d: input {x.shape} incompatible with kernel {w.shape}")
        xp, oh, ow, offs = self._pad(x)
        k, b = self.kernel, x.shape[0]
        cols = _windows(xp, k, self.stride, oh, ow).reshape(b * oh * ow, -1)
        y = cols @ w.reshape(-1, self.filters)
        if self.use_bias:
            y += self.params["bias"]
        return self._record(y.reshape(b, oh, ow, self.filters), (cols, x.shape, xp.shape, offs))

    def backward(self, grad):
        cols, xshape, xpshape, (pt, pl) = self._pop_tape(grad)
        b, oh, ow, _ = grad.shape
        k, s = self.kernel, self.stride
        w = self.params["kernel"]
        g2 = grad.reshape(-1, self.filters)
        self.grads["kernel"] = (cols.T @ g2).reshape(w.shape)
        if self.use_bias:
            self.grads["bias"] = _sum64(g2, 0)
        gcols = (g2 @ w.reshape(-1, self.filters).T).reshape(b, oh, ow, k, k, xshape[-1])
        dxp = np.zeros(xpshape, dtype=grad.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, i:i + s * (oh - 1) + 1:s, j:j + s * (ow - 1) + 1:s, :] += gcols[:, :, :, i, j, :]
        return (dxp[:, pt:pt + xshape[1], pl:pl + xshape[2], :],)


class DepthwiseSeparableConv2D(Layer):
    """Per-channel k x k convolution followed by a 1 x 1 channel-mixing convolution."""

    kind = "depthwise_separable_conv2d"

    def __init__(self, filters: int, kernel: int = 3, stride: int = 1, padding: str = "same",
                 use_bias: bool = True, trainable: bool = True):
        super().__init__(trainable)
        self.filters, self.kernel, self.stride = filters, kernel, stride
        self.padding, self.use_bias = padding, use_bias

    def config(self):
        return {"filters": self.filters, "kernel": self.kernel, "stride": self.stride,
                "padding": self.padding, "use_bias": self.use_bias}

    def output_shape(self, shape):
        if len(shape) != 3:
            raise ShapeError(f"separable conv expects [H, W, C] inputs, got {shape}")
        h, w, _ = shape
        oh = conv_output_extent(h, self.kernel, self.stride, self.padding)[0]
        ow = conv_output_extent(w, self.kernel, self.stride, self.padding)[0]
        return (oh, ow, self.filters)

    def build(self, shape, rng, dtype=T.DEFAULT_DTYPE):
        c, k = shape[-1], self.kernel
        self.params["depthwise"] = _he_uniform(rng, (k, k, c), k * k, dtype)
        if self.use_bias:
            self.params["depthwise_bias"] = np.zeros(c, dtype=dtype)
        self.params["pointwise"] = _he_uniform(rng, (1, 1, c, self.filters), c, dtype)
        if self.use_bias:
            self.params["pointwise_bias"] = np.zeros(self.filters, dtype=dtype)

    def forward(self, x, ctx=INFER):
        dw = self.params["depthwise"]
        if x.ndim != 4 or x.shape[-1] != dw.shape[2]:
            raise ShapeError(f"separable conv: input {x.shape} incompatible with depthwise {dw.shape}")
        b, h, w, c = x.shape
        k, s = self.kernel, self.stride
        oh, pt, pb = conv_output_extent(h, k, s, self.padding)
        ow, pl, pr = conv_output_extent(w, k, s, self.padding)
        xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0))) if (pt or pb or pl or pr) else x
        d = np.zeros((b, oh, ow, c), dtype=x.dtype)
        for i in range(k):
            for j in range(k):
                d += xp[:, i:i + s * (oh - 1) + 1:s, j:j + s * (ow - 1) + 1:s, :] * dw[i, j]
        if self.use_bias:
            d += self.params["depthwise_bias"]
        pw = self.params["pointwise"].reshape(c, self.filters)
        d2 = d.reshape(-1, c)
        y = d2 @ pw
        if self.use_bias:
            y += self.params["pointwise_bias"]
        return self._record(y.reshape(b, oh, ow, self.filters), (xp, d2, x.shape, (pt, pl)))

    def backward(self, grad):
        xp, d2, xshape, (pt, pl) = self._pop_tape(grad)
        b, h, w, c = xshape
        oh, ow = grad.shape[1:3]
        k, s = self.kernel, self.stride
        pw = self.params["pointwise"].reshape(c, self.filters)
        g2 = grad.reshape(-1, self.filters)
        self.grads["pointwise"] = (d2.T @ g2).reshape(1, 1, c, self.filters)
        if self.use_bias:
            self.grads["pointwise_bias"] = _sum64(g2, 0)
        gd = (g2 @ pw.T).reshape(b, oh, ow, c)
        if self.use_bias:
            self.grads["depthwise_bias"] = _sum64(gd, (0, 1, 2))
        dw = self.params["depthwise"]
        gdw = np.empty_like(dw)
        dxp = np.zeros(xp.shape, dtype=grad.dtype)
        for i in range(k):
            for j in range(k):
                sl = (slice(None), slice(i, i + s * (oh - 1) + 1, s), slice(j, j + s * (ow - 1) + 1, s))
                gdw[i, j] = _sum64(xp[sl] * gd, (0, 1, 2))
                dxp[sl] += gd * dw[i, j]
        self.grads["depthwise"] = gdw
        return (dxp[:, pt:pt + h, pl:pl + w, :],)


class Pool2D(Layer):
    """Max or average pooling over k x k windows.

    Max-pool gradients go to the first maximal element in row-major window
    order. ``same`` padding pads max pools with -inf and excludes padded cells
    from average-pool denominators.
    """

    def __init__(self, kind: str = "max", window: int = 2, stride: int | None = None,
                 padding: str = "valid"):
        super().__init__(trainable=True)
        if kind not in ("max", "avg"):
            raise ConfigError(f"unknown pool kind {kind!r}")
        self.pool, self.window = kind, window
        self.stride = stride or window
        self.padding = padding
        self.kind = f"{kind}_pool2d"

    def config(self):
        return {"kind": self.pool, "window": self.window, "stride": self.stride, "padding": self.padding}

    def output_shape(self, shape):
        if len(shape) != 3:
            raise ShapeError(f"pool2d expects [H, W, C] inputs, got {shape}")
        h, w, c = shape
        if self.padding == "valid" and (self.window > h or self.window > w):
            raise ShapeError(f"pool window {self.window} larger than input {h}x{w}")
        oh = conv_output_extent(h, self.window, self.stride, self.padding)[0]
        ow = conv_output_extent(w, self.window, self.stride, self.padding)[0]
        return (oh, ow, c)

    def forward(self, x, ctx=INFER):
        if x.ndim != 4:
            raise ShapeError(f"pool2d expects rank-4 input, got {x.shape}")
        oh, ow, c = self.output_shape(x.shape[1:])
        b, h, w, _ = x.shape
        k, s = self.window, self.stride
        _, pt, pb = conv_output_extent(h, k, s, self.padding)
        _, pl, pr = conv_output_extent(w, k, s, self.padding)
        pads = ((0, 0), (pt, pb), (pl, pr), (0, 0))
        if self.pool == "max":
            xp = np.pad(x, pads, constant_values=-np.inf) if (pt or pb or pl or pr) else x
            win = _windows(xp, k, s, oh, ow).reshape(b, oh, ow, k * k, c)
            arg = np.argmax(win, axis=3)
            y = np.take_along_axis(win, arg[:, :, :, None, :], axis=3)[:, :, :, 0, :]
            payload = (arg, x.shape, xp.shape, (pt, pl), None)
        else:
            xp = np.pad(x, pads) if (pt or pb or pl or pr) else x
            total = _windows(xp, k, s, oh, ow).sum(axis=(3, 4))
            if pt or pb or pl or pr:
                ones = np.pad(np.ones((1, h, w, 1), dtype=x.dtype), pads)
                count = _windows(ones, k, s, oh, ow).sum(axis=(3, 4))
            else:
                count = np.full((1, oh, ow, 1), k * k, dtype=x.dtype)
            y = total / count
            payload = (None, x.shape, xp.shape, (pt, pl), count)
        return self._record(y, payload)

    def backward(self, grad):
        arg, xshape, xpshape, (pt, pl), count = self._pop_tape(grad)
        _, oh, ow, _ = grad.shape
        k, s = self.window, self.stride
        dxp = np.zeros(xpshape, dtype=grad.dtype)
        g = grad if count is None else grad / count
        for i in range(k):
            for j in range(k):
                sl = (slice(None), slice(i, i + s * (oh - 1) + 1, s), slice(j, j + s * (ow - 1) + 1, s))
                if count is None:
                    dxp[sl] += np.where(arg == i * k + j, grad, 0)
                else:
                    dxp[sl] += g
        return (dxp[:, pt:pt + xshape[1], pl:pl + xshape[2], :],)


class GlobalPool(Layer):
    def __init__(self, kind: str = "avg"):
        super().__init__(trainable=True)
        if kind not in ("max", "avg"):
            raise ConfigError(f"unknown pool kind {kind!r}")
        self.pool = kind
        self.kind = f"global_{kind}_pool"

    def config(self):
        return {"kind": self.pool}

    def output_shape(self, shape):
        if len(shape) != 3:
            raise ShapeError(f"global pool expects [H, W, C] inputs, got {shape}")
        return (shape[-1],)

    def forward(self, x, ctx=INFER):
        if x.ndim != 4:
            raise ShapeError(f"global pool expects rank-4 input, got {x.shape}")
        b, h, w, c = x.shape
        if self.pool == "avg":
            return self._record(T.reduce("mean", x, (1, 2)), (x.shape, None))
        flat = x.reshape(b, h * w, c)
        arg = np.argmax(flat, axis=1)
        y = np.take_along_axis(flat, arg[:, None, :], axis=1)[:, 0, :]
        return self._record(y, (x.shape, arg))

    def backward(self, grad):
        xshape, arg = self._pop_tape(grad)
        b, h, w, c = xshape
        if arg is None:
            return (np.broadcast_to(grad[:, None, None, :] / (h * w), xshape).astype(grad.dtype),)
        dx = np.zeros((b, h * w, c), dtype=grad.dtype)
        np.put_along_axis(dx, arg[:, None, :], grad[:, None, :], axis=1)
        return (dx.reshape(xshape),)


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, x, ctx=INFER):
        return self._record(T.flatten(x), x.shape)

    def backward(self, grad):
        return (grad.reshape(self._pop_tape(grad)),)


class Dense(Layer):
    kind = "dense"

    def __init__(self, units: int, use_bias: bool = True, trainable: bool = True):
        super().__init__(trainable)
        if units < 1:
            raise ConfigError("units must be positive")
        self.units, self.use_bias = units, use_bias

    def config(self):
        return {"units": self.units}

    def output_shape(self, shape):
        if len(shape) != 1:
            raise ShapeError(f"dense expects flat [n] inputs, got {shape}")
        return (self.units,)

    def build(self, shape, rng, dtype=T.DEFAULT_DTYPE):
        n = shape[0]
        self.params["kernel"] = _he_uniform(rng, (n, self.units), n, dtype)
        if self.use_bias:
            self.params["bias"] = np.zeros(self.units, dtype=dtype)

    def forward(self, x, ctx=INFER):
        w = self.params["kernel"]
        if x.ndim != 2 or x.shape[1] != w.shape[0]:
            raise ShapeError(f"dense: input {x.shape} incompatible with kernel {w.shape}")
        y = T.matmul(x, w)
        if self.use_bias:
            y = y + self.params["bias"]
        return self._record(y, x)

    def backward(self, grad):
        x = self._pop_tape(grad)
        self.grads["kernel"] = x.T @ grad
        if self.use_bias:
            self.grads["bias"] = _sum64(grad, 0)
        return (grad @ self.params["kernel"].T,)


def sigmoid(x: np.ndarray) -> np.ndarray:
    lim = _clamp_limit(x.dtype)
    y = 1.0 / (1.0 + np.exp(-np.clip(x, -lim, lim)))
    # keep the range open at the top: 1 - e^-lim rounds to exactly 1.0
    return np.minimum(y, np.nextafter(y.dtype.type(1), y.dtype.type(0)))


def log_softmax(x: np.ndarray) -> np.ndarray:
    # shift by the row max first, then floor the shifted logits; clamping raw
    # logits would merge distinct large values and move the argmax
    lim = _clamp_limit(x.dtype)
    z = np.maximum(x - x.max(axis=-1, keepdims=True), -lim)
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


def softmax(x: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(x))


class Activation(Layer):
    def __init__(self, kind: str):
        super().__init__(trainable=True)
        if kind not in ("relu", "sigmoid", "softmax"):
            raise ConfigError(f"unknown activation {kind!r}")
        self.fn = kind
        self.kind = kind

    def config(self):
        return {"kind": self.fn}

    def output_shape(self, shape):
        return tuple(shape)

    def forward(self, x, ctx=INFER):
        if self.fn == "relu":
            y = np.maximum(x, 0)
            return self._record(y, x > 0)
        y = sigmoid(x) if self.fn == "sigmoid" else softmax(x)
        return self._record(y, y)

    def backward(self, grad):
        saved = self._pop_tape(grad)
        if self.fn == "relu":
            return (np.where(saved, grad, 0).astype(grad.dtype),)
        if self.fn == "sigmoid":
            return (grad * saved * (1 - saved),)
        y = saved
        return (y * (grad - np.sum(grad * y, axis=-1, keepdims=True)),)


class BatchNorm(Layer):
    """Per-channel batch normalization over every axis except the last.

    A frozen (non-trainable) instance always normalizes with its moving
    statistics, even in training mode, so its state never changes.
    """

    kind = "batchnorm"

    def __init__(self, momentum: float = 0.99, eps: float = 1e-3, trainable: bool = True):
        super().__init__(trainable)
        self.momentum, self.eps = momentum, eps

    def config(self):
        return {"momentum": self.momentum, "eps": self.eps}

    def output_shape(self, shape):
        return tuple(shape)

    def build(self, shape, rng, dtype=T.DEFAULT_DTYPE):
        c = shape[-1]
        self.params["gamma"] = np.ones(c, dtype=dtype)
        self.params["beta"] = np.zeros(c, dtype=dtype)
        self.state["moving_mean"] = np.zeros(c, dtype=dtype)
        self.state["moving_var"] = np.ones(c, dtype=dtype)

    def forward(self, x, ctx=INFER):
        gamma, beta = self.params["gamma"], self.params["beta"]
        if x.shape[-1] != gamma.shape[0]:
            raise ShapeError(f"batchnorm: {x.shape[-1]} channels, parameters for {gamma.shape[0]}")
        axes = tuple(range(x.ndim - 1))
        if ctx.train and self.trainable:
            mean = T.reduce("mean", x, axes)
            xc = x - mean
            var = T.reduce("mean", xc * xc, axes)
            inv = (1.0 / np.sqrt(var + self.eps)).astype(x.dtype)
            xhat = xc * inv
            m = self.momentum
            self.state["moving_mean"] = (m * self.state["moving_mean"] + (1 - m) * mean).astype(x.dtype)
            self.state["moving_var"] = (m * self.state["moving_var"] + (1 - m) * var).astype(x.dtype)
            batch_stats = True
        else:
            inv = (1.0 / np.sqrt(self.state["moving_var"] + self.eps)).astype(x.dtype)
            xhat = (x - self.state["moving_mean"]) * inv
            batch_stats = False
        return self._record(xhat * gamma + beta, (xhat, inv, batch_stats))

    def backward(self, grad):
        xhat, inv, batch_stats = self._pop_tape(grad)
        axes = tuple(range(grad.ndim - 1))
        self.grads["gamma"] = _sum64(grad * xhat, axes)
        self.grads["beta"] = _sum64(grad, axes)
        gx = grad * self.params["gamma"]
        if not batch_stats:
            return (gx * inv,)
        n = grad.size // grad.shape[-1]
        s1 = _sum64(gx, axes)
        s2 = _sum64(gx * xhat, axes)
        return ((inv / n) * (n * gx - s1 - xhat * s2),)


class Dropout(Layer):
    """Inverted dropout: training zeroes with probability ``rate`` and rescales survivors."""

    kind = "dropout"

    def __init__(self, rate: float):
        super().__init__(trainable=True)
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate

    def config(self):
        return {"rate": self.rate}

    def output_shape(self, shape):
        return tuple(shape)

    def forward(self, x, ctx=INFER):
        if not ctx.train or self.rate == 0.0:
            return self._record(x, None)
        keep = ctx.rng(self.stream).random(x.shape) >= self.rate
        mask = keep.astype(x.dtype) / x.dtype.type(1.0 - self.rate)
        return self._record(x * mask, mask)

    def backward(self, grad):
        mask = self._pop_tape(grad)
        return (grad if mask is None else grad * mask,)


class ResidualAdd(Layer):
    kind = "residual_add"
    n_inputs = 2

    def output_shape(self, a, b):
        if tuple(a) != tuple(b):
            raise ShapeError(f"residual add needs equal shapes, got {a} and {b}")
        return tuple(a)

    def forward(self, trunk, branch, ctx=INFER):
        if trunk.shape != branch.shape:
            raise ShapeError(f"residual add needs equal shapes, got {trunk.shape} and {branch.shape}")
        return self._record(T.elementwise("add", trunk, branch), None)

    def backward(self, grad):
        self._pop_tape(grad)
        return grad, grad


class ChannelScale(Layer):
    """Multiply every spatial position of channel c by a per-sample gate value."""

    kind = "channel_scale"
    n_inputs = 2

    def output_shape(self, trunk, gate):
        if len(trunk) != 3 or len(gate) != 1 or trunk[-1] != gate[0]:
            raise ShapeError(f"channel scale: trunk {trunk} vs gate {gate}")
        return tuple(trunk)

    def forward(self, trunk, gate, ctx=INFER):
        if trunk.ndim != 4 or gate.shape != (trunk.shape[0], trunk.shape[-1]):
            raise ShapeError(f"channel scale: trunk {trunk.shape} vs gate {gate.shape}")
        return self._record(trunk * gate[:, None, None, :], (trunk, gate))

    def backward(self, grad):
        trunk, gate = self._pop_tape(grad)
        return grad * gate[:, None, None, :], _sum64(grad * trunk, (1, 2))


class Concat(Layer):
    kind = "concat_channels"
    n_inputs = -1

    def output_shape(self, *shapes):
        if not shapes:
            raise ShapeError("concat needs at least one input")
        spatial = {tuple(s[:-1]) for s in shapes}
        if len(spatial) != 1:
            raise ShapeError(f"concat: spatial extents differ: {shapes}")
        return (*shapes[0][:-1], sum(s[-1] for s in shapes))

    def forward(self, *xs, ctx=INFER):
        self.output_shape(*(x.shape for x in xs))
        return self._record(np.concatenate(xs, axis=-1), [x.shape[-1] for x in xs])

    def backward(self, grad):
        widths = self._pop_tape(grad)
        return tuple(np.split(grad, np.cumsum(widths)[:-1], axis=-1))


def separable_param_count(c: int, f: int, k: int, bias: bool = True) -> int:
    return k * k * c + c * f + ((c + f) if bias else 0)


def conv_param_count(c: int, f: int, k: int, bias: bool = True) -> int:
    return k * k * c * f + (f if bias else 0)
