"""Finite-difference validation of the analytic backward passes."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import NumericError
from .layers import (Activation, BatchNorm, ChannelScale, Concat, Context, Conv2D, Dense,
                     DepthwiseSeparableConv2D, Dropout, Flatten, GlobalPool, Layer, Pool2D,
                     ResidualAdd)

DEFAULT_TOLERANCE = 1e-4


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - f| / max(|a|, |f|, 1e-8) over all elements."""
    a = np.asarray(analytic, dtype=np.float64)
    f = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(f)), 1e-8)
    return float(np.max(np.abs(a - f) / denom)) if a.size else 0.0


def numeric_gradient(fn: Callable[[], float], target: np.ndarray, eps: float) -> np.ndarray:
    """Central differences of the scalar ``fn`` w.r.t. every element of ``target`` (mutated in place)."""
    grad = np.zeros(target.shape, dtype=np.float64)
    flat = target.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = fn()
        flat[i] = orig - eps
        down = fn()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * eps)
    return grad


@dataclass
class GradcheckReport:
    kind: str
    errors: dict[str, float] = field(default_factory=dict)
    tolerance: float = DEFAULT_TOLERANCE

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance


def _away_from_zero(x: np.ndarray, margin: float = 0.05) -> np.ndarray:
    return np.where(x >= 0, x + margin, x - margin)


def _well_separated(rng: np.random.Generator, shape, gap: float = 0.01) -> np.ndarray:
    """N(0, 1) draws nudged so any two values differ by at least ``gap``, order preserved."""
    x = rng.standard_normal(shape)
    flat = x.reshape(-1)
    order = np.argsort(flat, kind="stable")
    flat[order] += gap * (np.arange(flat.size) - flat.size / 2)
    return x


def gradcheck(layer: Layer, input_shapes: Sequence[Sequence[int]] | Sequence[int], eps: float = 1e-5,
              seed: int = 0, train: bool = True, inputs: Sequence[np.ndarray] | None = None,
              tolerance: float = DEFAULT_TOLERANCE) -> GradcheckReport:
    """Compare a layer's analytic gradients with central finite differences in float64.

    The scalar probed is ``sum(output * P)`` for a fixed random projection
    ``P``; a plain sum would make normalizing layers (softmax, batchnorm)
    constant and the check vacuous. Shapes include the batch axis. Inputs are
    drawn from N(0, 1), spread so no two values are within 0.01 of each other
    (a max-pool near-tie would let the difference step swap the argmax), and
    pushed at least 0.05 away from zero so no element sits on a ReLU kink.
    """
    rng = np.random.default_rng(seed)
    if input_shapes and isinstance(input_shapes[0], int):
        input_shapes = [input_shapes]
    if inputs is None:
        inputs = [_away_from_zero(_well_separated(rng, tuple(s))) for s in input_shapes]
    xs = [np.array(x, dtype=np.float64) for x in inputs]
    if not layer.params and not layer.state:
        layer.build(*(x.shape[1:] for x in xs), rng=rng, dtype=np.float64)
    else:
        layer.astype(np.float64)
    ctx = Context(train=train, seed=seed, step=0)

    out = layer.forward(*xs, ctx=ctx)
    if not np.all(np.isfinite(out)):
        raise NumericError(f"{layer.kind}: non-finite forward output")
    proj = rng.standard_normal(out.shape)

    def loss() -> float:
        y = layer.forward(*xs, ctx=ctx)
        layer._tape = None
        return float(np.sum(y * proj))

    input_grads = layer.backward(proj)
    param_grads = {k: v.copy() for k, v in layer.grads.items()}

    report = GradcheckReport(kind=layer.kind, tolerance=tolerance)
    for i, (x, g) in enumerate(zip(xs, input_grads)):
        name = "input" if len(xs) == 1 else f"input{i}"
        report.errors[name] = relative_error(g, numeric_gradient(loss, x, eps))
    for name, p in layer.params.items():
        report.errors[name] = relative_error(param_grads[name], numeric_gradient(loss, p, eps))
    return report


def gradcheck_softmax_cross_entropy(batch: int = 4, eps: float = 1e-5, seed: int = 0,
                                    tolerance: float = DEFAULT_TOLERANCE) -> GradcheckReport:
    """Fused softmax + categorical cross-entropy: analytic (p - y) / B vs finite differences."""
    from .train import softmax_cross_entropy

    rng = np.random.default_rng(seed)
    logits = rng.standard_normal((batch, 2)) * 2
    onehot = np.eye(2)[rng.integers(0, 2, size=batch)]
    _, grad, _ = softmax_cross_entropy(logits, onehot)
    numeric = numeric_gradient(lambda: softmax_cross_entropy(logits, onehot)[0], logits, eps)
    return GradcheckReport("softmax_cross_entropy", {"logits": relative_error(grad, numeric)}, tolerance)


# kind -> (factory, input shapes incl. batch, train mode)
SUITE: dict[str, tuple[Callable[[], Layer], list[tuple[int, ...]], bool]] = {
    "conv2d": (lambda: Conv2D(3, 2, stride=1, padding="valid"), [(2, 4, 4, 2)], True),
    "conv2d_same_stride2": (lambda: Conv2D(2, 3, stride=2, padding="same"), [(2, 5, 5, 2)], True),
    "depthwise_separable_conv2d": (lambda: DepthwiseSeparableConv2D(3, 3, stride=1, padding="same"),
                                   [(2, 4, 4, 2)], True),
    "max_pool2d": (lambda: Pool2D("max", 2, 2), [(2, 4, 4, 2)], True),
    "max_pool2d_overlap_same": (lambda: Pool2D("max", 3, 2, padding="same"), [(2, 5, 5, 2)], True),
    "avg_pool2d": (lambda: Pool2D("avg", 2, 2), [(2, 4, 4, 2)], True),
    "avg_pool2d_same": (lambda: Pool2D("avg", 3, 2, padding="same"), [(2, 5, 5, 2)], True),
    "global_avg_pool": (lambda: GlobalPool("avg"), [(2, 3, 3, 4)], True),
    "global_max_pool": (lambda: GlobalPool("max"), [(2, 3, 3, 4)], True),
    "flatten": (lambda: Flatten(), [(2, 2, 2, 3)], True),
    "dense": (lambda: Dense(3), [(2, 4)], True),
    "batchnorm": (lambda: BatchNorm(), [(8, 5)], True),
    "batchnorm_spatial": (lambda: BatchNorm(), [(2, 3, 3, 2)], True),
    "batchnorm_infer": (lambda: BatchNorm(), [(4, 3)], False),
    "dropout": (lambda: Dropout(0.3), [(4, 6)], True),
    "relu": (lambda: Activation("relu"), [(3, 5)], True),
    "sigmoid": (lambda: Activation("sigmoid"), [(3, 5)], True),
    "softmax": (lambda: Activation("softmax"), [(3, 4)], True),
    "residual_add": (lambda: ResidualAdd(), [(2, 3, 3, 2), (2, 3, 3, 2)], True),
    "channel_scale": (lambda: ChannelScale(), [(2, 3, 3, 4), (2, 4)], True),
    "concat_channels": (lambda: Concat(), [(2, 3, 3, 2), (2, 3, 3, 3)], True),
}


def run_suite(overrides: dict[str, Callable[[], Layer]] | None = None, seed: int = 0,
              tolerance: float = DEFAULT_TOLERANCE) -> list[GradcheckReport]:
    """Gradcheck every layer kind once; ``overrides`` swaps in alternative factories."""
    overrides = overrides or {}
    reports = []
    for kind, (factory, shapes, train) in SUITE.items():
        layer = overrides.get(kind, factory)()
        report = gradcheck(layer, shapes, seed=seed, train=train, tolerance=tolerance)
        report.kind = kind
        reports.append(report)
    reports.append(gradcheck_softmax_cross_entropy(seed=seed, tolerance=tolerance))
    return reports
