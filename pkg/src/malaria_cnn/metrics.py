"""Binary classification metrics with parasitized (label 1) as the positive class."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import UndefinedMetricError

THRESHOLD = 0.5


def predict_labels(prob_positive: np.ndarray) -> np.ndarray:
    """Threshold positive-class probabilities; a tie at 0.5 goes to the positive class."""
    return (np.asarray(prob_positive) >= THRESHOLD).astype(np.int64)


@dataclass(frozen=True)
class Confusion:
    tn: int
    fp: int
    fn: int
    tp: int

    @property
    def n(self) -> int:
        return self.tn + self.fp + self.fn + self.tp

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.n

    def as_matrix(self) -> np.ndarray:
        """Rows are true class, columns predicted class, both ordered [uninfected, parasitized]."""
        return np.array([[self.tn, self.fp], [self.fn, self.tp]], dtype=np.int64)


def confusion_matrix(true_labels, pred_labels) -> Confusion:
    t = np.asarray(true_labels, dtype=np.int64)
    p = np.asarray(pred_labels, dtype=np.int64)
    if t.size == 0:
        raise ValueError("confusion matrix of an empty prediction set")
    if t.shape != p.shape:
        raise ValueError(f"label arrays differ in shape: {t.shape} vs {p.shape}")
    tp = int(np.sum((t == 1) & (p == 1)))
    tn = int(np.sum((t == 0) & (p == 0)))
    fp = int(np.sum((t == 0) & (p == 1)))
    fn = int(np.sum((t == 1) & (p == 0)))
    return Confusion(tn, fp, fn, tp)


def _safe_div(num: float, den: float, flags: list[str], label: str) -> float:
    if den == 0:
        flags.append(label)
        return 0.0
    return num / den


@dataclass
class PRF:
    precision: float
    recall: float
    f1: float
    support: int


def prf(c: Confusion) -> tuple[dict[str, PRF], list[str]]:
    """Per-class, macro and support-weighted precision/recall/F1.

    Zero denominators yield 0 and are listed in the returned flags.
    """
    flags: list[str] = []
    out: dict[str, PRF] = {}
    # (true positives, false positives, false negatives, support) seen from each class
    views = {"uninfected": (c.tn, c.fn, c.fp, c.tn + c.fp), "parasitized": (c.tp, c.fp, c.fn, c.tp + c.fn)}
    for name, (tp, fp, fn, support) in views.items():
        p = _safe_div(tp, tp + fp, flags, f"precision[{name}]")
        r = _safe_div(tp, tp + fn, flags, f"recall[{name}]")
        f = _safe_div(2 * p * r, p + r, flags, f"f1[{name}]")
        out[name] = PRF(p, r, f, support)
    per_class = [out["uninfected"], out["parasitized"]]
    out["macro"] = PRF(*(sum(getattr(v, a) for v in per_class) / 2 for a in ("precision", "recall", "f1")),
                       c.n)
    out["weighted"] = PRF(*(sum(getattr(v, a) * v.support for v in per_class) / c.n
                            for a in ("precision", "recall", "f1")), c.n)
    return out, flags


def _average_ranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    ranks = np.empty(len(x), dtype=np.float64)
    # tie groups share the mean of their 1-based positions
    boundaries = np.flatnonzero(np.diff(xs)) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [len(x)]))
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = (s + 1 + e) / 2.0
    return ranks


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC: P(random positive outranks random negative), ties count one half."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC-AUC needs both classes present")
    # twice the rank sum is an exact integer, so the pair count below is exact
    twice_rank_sum = int(round(2 * float(np.sum(_average_ranks(s)[y == 1]))))
    twice_pairs = twice_rank_sum - n_pos * (n_pos + 1)
    return twice_pairs / (2 * n_pos * n_neg)


def rmse(prob_positive, labels) -> float:
    p = np.asarray(prob_positive, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.size == 0:
        raise ValueError("rmse of an empty prediction set")
    return math.sqrt(float(np.mean((p - y) ** 2)))


@dataclass
class MetricsReport:
    confusion: Confusion
    accuracy: float
    per_class: dict[str, PRF]
    auc_roc: float
    rmse: float
    n: int
    flags: list[str] = field(default_factory=list)

    @property
    def precision(self) -> float:
        return self.per_class["weighted"].precision

    @property
    def recall(self) -> float:
        return self.per_class["weighted"].recall

    @property
    def f1(self) -> float:
        return self.per_class["weighted"].f1


def evaluate_predictions(prob_positive, true_labels) -> MetricsReport:
    """Build the full report from positive-class probabilities and true labels."""
    p = np.asarray(prob_positive, dtype=np.float64)
    t = np.asarray(true_labels, dtype=np.int64)
    c = confusion_matrix(t, predict_labels(p))
    per_class, flags = prf(c)
    try:
        auc = roc_auc(p, t)
    except UndefinedMetricError:
        auc = float("nan")
        flags.append("auc_roc")
    return MetricsReport(c, c.accuracy, per_class, auc, rmse(p, t), c.n, flags)
