from fractions import Fraction

import numpy as np
import pytest

from malaria_cnn import metrics as M
from malaria_cnn.errors import UndefinedMetricError


def brute_tally(true, pred):
    tn = fp = fn = tp = 0
    for t, p in zip(true, pred):
        if t == 1 and p == 1:
            tp += 1
        elif t == 1:
            fn += 1
        elif p == 1:
            fp += 1
        else:
            tn += 1
    return tn, fp, fn, tp


def pair_auc(scores, labels):
    """O(n^2) pair count in exact rationals: wins + ties/2 over all positive/negative pairs."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = Fraction(0)
    for p in pos:
        for q in neg:
            wins += 1 if p > q else Fraction(1, 2) if p == q else 0
    return float(wins / (len(pos) * len(neg)))


def ratio(a, b):
    return a / b if b else 0.0


class TestWorkedExamples:
    def test_all_correct(self):
        c = M.confusion_matrix([1, 0, 1], [1, 0, 1])
        assert c.fp == c.fn == 0

    def test_hand_tally(self):
        c = M.confusion_matrix([1, 1, 0, 0], [1, 0, 0, 1])
        assert (c.tp, c.fn, c.tn, c.fp) == (1, 1, 1, 1)

    def test_empty(self):
        with pytest.raises(ValueError):
            M.confusion_matrix([], [])

    def test_prf_perfect(self):
        per, flags = M.prf(M.Confusion(5, 0, 0, 5))
        assert not flags
        for cls in ("uninfected", "parasitized", "macro", "weighted"):
            assert (per[cls].precision, per[cls].recall, per[cls].f1) == (1, 1, 1)

    def test_prf_half(self):
        per, _ = M.prf(M.Confusion(1, 1, 1, 1))
        p = per["parasitized"]
        assert (p.precision, p.recall, p.f1) == (0.5, 0.5, 0.5)

    def test_degenerate_flagged(self):
        per, flags = M.prf(M.Confusion(4, 0, 0, 0))
        assert per["parasitized"].precision == 0 and "precision[parasitized]" in flags

    def test_auc_examples(self):
        assert M.roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
        assert M.roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
        assert M.roc_auc([0.3] * 6, [0, 1] * 3) == 0.5

    def test_auc_single_class(self):
        with pytest.raises(UndefinedMetricError):
            M.roc_auc([0.1, 0.2], [1, 1])

    def test_rmse_examples(self):
        assert M.rmse([1.0, 0.0], [1, 0]) == 0
        assert M.rmse([0.5], [1]) == 0.5
        assert M.rmse([0.5] * 7, [0, 1, 1, 0, 1, 1, 1]) == 0.5

    def test_threshold_tie_is_positive(self):
        assert M.predict_labels(np.array([0.5, 0.4999, 0.51])).tolist() == [1, 0, 1]


class TestRandomOracles:
    def test_thousand_prediction_sets(self):
        rng = np.random.default_rng(2024)
        for _ in range(1000):
            n = int(rng.integers(1, 201))
            true = rng.integers(0, 2, n)
            probs = np.round(rng.random(n), int(rng.integers(1, 4)))  # coarse rounding forces ties
            pred = [1 if p >= 0.5 else 0 for p in probs]
            tn, fp, fn, tp = brute_tally(true, pred)
            rep = M.evaluate_predictions(probs, true)
            c = rep.confusion
            assert (c.tn, c.fp, c.fn, c.tp) == (tn, fp, fn, tp)
            assert c.n == n
            assert rep.accuracy == sum(int(t == p) for t, p in zip(true, pred)) / n
            prec, rec = ratio(tp, tp + fp), ratio(tp, tp + fn)
            f1 = ratio(2 * prec * rec, prec + rec)
            pos = rep.per_class["parasitized"]
            assert (pos.precision, pos.recall, pos.f1) == (prec, rec, f1)
            nprec, nrec = ratio(tn, tn + fn), ratio(tn, tn + fp)
            neg = rep.per_class["uninfected"]
            assert (neg.precision, neg.recall) == (nprec, nrec)
            assert rep.per_class["macro"].precision == (prec + nprec) / 2
            if 0 < true.sum() < n:
                assert rep.auc_roc == pair_auc(probs.tolist(), true.tolist())
            else:
                assert np.isnan(rep.auc_roc)

    def test_auc_pair_oracle_up_to_500(self):
        rng = np.random.default_rng(7)
        for _ in range(40):
            n = int(rng.integers(2, 501))
            labels = rng.integers(0, 2, n)
            labels[:2] = [0, 1]
            scores = np.round(rng.random(n), 2)
            assert M.roc_auc(scores, labels) == pair_auc(scores.tolist(), labels.tolist())

    def test_auc_monotone_transform_invariant(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            labels = rng.integers(0, 2, 50)
            labels[:2] = [0, 1]
            s = np.round(rng.random(50), 2)
            base = M.roc_auc(s, labels)
            assert M.roc_auc(np.exp(3 * s) - 7, labels) == base
            assert M.roc_auc(s ** 3, labels) == base

    def test_label_flip(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            n = int(rng.integers(1, 100))
            true, pred = rng.integers(0, 2, n), rng.integers(0, 2, n)
            a = M.confusion_matrix(true, pred)
            b = M.confusion_matrix(true, 1 - pred)
            assert a.accuracy + b.accuracy == pytest.approx(1, abs=1e-15)
            assert (b.fp, b.fn) == (a.tn, a.tp) and (b.tn, b.tp) == (a.fp, a.fn)

    def test_rmse_polarity(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            p, y = rng.random(30), rng.integers(0, 2, 30)
            assert M.rmse(p, y) == pytest.approx(M.rmse(1 - p, 1 - y), abs=1e-15)

    def test_f1_between_p_and_r(self):
        rng = np.random.default_rng(6)
        for _ in range(1000):
            c = M.Confusion(*map(int, rng.integers(0, 50, 4)))
            if c.n == 0:
                continue
            per, _ = M.prf(c)
            for cls in ("uninfected", "parasitized"):
                v = per[cls]
                if v.precision and v.recall:
                    assert min(v.precision, v.recall) - 1e-12 <= v.f1 <= max(v.precision, v.recall) + 1e-12

    def test_ranges_and_accuracy_identity(self):
        rng = np.random.default_rng(8)
        for _ in range(200):
            n = int(rng.integers(2, 100))
            y = rng.integers(0, 2, n)
            y[:2] = [0, 1]
            rep = M.evaluate_predictions(rng.random(n), y)
            c = rep.confusion
            assert rep.accuracy == (c.tp + c.tn) / n
            for v in (rep.accuracy, rep.precision, rep.recall, rep.f1, rep.auc_roc, rep.rmse):
                assert 0 <= v <= 1
