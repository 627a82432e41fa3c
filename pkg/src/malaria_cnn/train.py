"""Loss, Adam, and the epoch-level training and evaluation loops."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Iterable

import numpy as np

from .errors import ConfigError, DivergenceError, LabelError, ShapeError
from .graph import Model
from .layers import INFER, Context, log_softmax
from . import metrics


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 32
    epochs: int = 10
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    deterministic: bool = True

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate must be non-negative")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ConfigError("Adam betas must lie in (0, 1)")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")

    def as_dict(self) -> dict:
        return asdict(self)


def _check_onehot(onehot: np.ndarray) -> None:
    ok = (onehot.ndim == 2 and np.all((onehot == 0) | (onehot == 1))
          and np.all(onehot.sum(axis=1) == 1))
    if not ok:
        raise LabelError("labels must be one-hot rows with exactly one 1")


def categorical_cross_entropy(probs: np.ndarray, onehot: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean ``-sum(y * log p)`` and its gradient with respect to ``probs``."""
    probs = np.asarray(probs, dtype=np.float64)
    onehot = np.asarray(onehot, dtype=np.float64)
    if probs.shape != onehot.shape:
        raise ShapeError(f"probs {probs.shape} vs labels {onehot.shape}")
    _check_onehot(onehot)
    if np.any(np.abs(probs.sum(axis=1) - 1) > 1e-4):
        raise ValueError("probability rows must sum to 1")
    p = np.clip(probs, 1e-12, 1.0)
    b = probs.shape[0]
    loss = float(-np.sum(onehot * np.log(p)) / b)
    grad = -onehot / p / b
    return loss, grad


def softmax_cross_entropy(logits: np.ndarray, onehot: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Fused softmax + cross-entropy: returns (loss, d loss / d logits = (p - y) / B, probs)."""
    if logits.shape != onehot.shape:
        raise ShapeError(f"logits {logits.shape} vs labels {onehot.shape}")
    _check_onehot(onehot)
    logp = log_softmax(logits)
    b = logits.shape[0]
    loss = float(-np.sum(onehot * logp, dtype=np.float64) / b)
    probs = np.exp(logp)
    grad = ((probs - onehot) / b).astype(logits.dtype)
    return loss, grad, probs


class Adam:
    """Adam with bias-corrected moments; moments are stored per parameter key."""

    def __init__(self, learning_rate: float = 0.001, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.learning_rate, self.beta1, self.beta2, self.eps = learning_rate, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    @classmethod
    def from_config(cls, cfg: TrainConfig) -> "Adam":
        return cls(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """Update ``params`` in place. Keys absent from ``params`` (frozen tensors) are untouched."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for key, p in params.items():
            g = grads.get(key)
            if g is None:
                continue
            if g.shape != p.shape:
                raise ShapeError(f"{key}: gradient {g.shape} vs parameter {p.shape}")
            if key not in self.m:
                self.m[key] = np.zeros_like(p)
                self.v[key] = np.zeros_like(p)
            m, v = self.m[key], self.v[key]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            m_hat = m / c1
            v_hat = v / c2
            p -= (self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.dtype)


@dataclass
class EpochStats:
    loss: float
    accuracy: float
    n: int


@dataclass
class EvalResult:
    loss: float
    accuracy: float
    probs: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return int(self.labels.shape[0])


def train_epoch(model: Model, batches: Iterable[tuple[np.ndarray, np.ndarray]], optimizer: Adam,
                seed: int = 0) -> EpochStats:
    """One pass: forward -> fused loss -> backward -> Adam step for every batch.

    Dropout masks are keyed on ``(seed, optimizer.t)`` so a resumed run replays
    them exactly. Accuracy uses the same 0.5 threshold as the metrics module.
    """
    total_loss = 0.0
    correct = 0
    n = 0
    for i, (x, y) in enumerate(batches):
        ctx = Context(train=True, seed=seed, step=optimizer.t)
        logits = model.forward(x, ctx)
        loss, grad, probs = softmax_cross_entropy(logits, y.astype(logits.dtype))
        if not np.isfinite(loss):
            raise DivergenceError(i, loss)
        model.backward(grad)
        optimizer.step(model.trainable_parameters(), model.gradients())
        b = x.shape[0]
        total_loss += loss * b
        correct += int(np.sum(metrics.predict_labels(probs[:, 1]) == y[:, 1]))
        n += b
    if n == 0:
        return EpochStats(float("nan"), float("nan"), 0)
    return EpochStats(total_loss / n, correct / n, n)


def evaluate(model: Model, batches: Iterable[tuple[np.ndarray, np.ndarray]]) -> EvalResult:
    """Inference-mode loss, accuracy and per-sample class probabilities; no state changes."""
    total_loss = 0.0
    probs, labels = [], []
    for i, (x, y) in enumerate(batches):
        logits = model.forward(x, INFER)
        loss, _, p = softmax_cross_entropy(logits, y.astype(logits.dtype))
        if not np.isfinite(loss):
            raise DivergenceError(i, loss)
        total_loss += loss * x.shape[0]
        probs.append(p.astype(np.float64))
        labels.append(np.argmax(y, axis=1))
    if not probs:
        return EvalResult(float("nan"), float("nan"), np.zeros((0, 2)), np.zeros(0, dtype=np.int64))
    probs = np.concatenate(probs)
    labels = np.concatenate(labels).astype(np.int64)
    accuracy = float(np.mean(metrics.predict_labels(probs[:, 1]) == labels))
    return EvalResult(total_loss / len(labels), accuracy, probs, labels)
