"""Ranking and classification metrics: RWS, MCC, ROC/AUC, accuracy, calibration."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.integrate import trapezoid

from badac.errors import LengthMismatchError, SingleClassTruthError


def rws(ranked_truth: Sequence[int], n: int) -> float:
    """Rank-weighted score of the top ``n`` entries of a ranking.

    ``ranked_truth[i]`` is 1 if the i-th most anomalous object is a true
    outlier.  Weights fall linearly from n at the top to 1 at rank n and the
    sum is divided by n(n+1)/2, so the score lies in [0, 1].
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if n > len(ranked_truth):
        raise ValueError(f"N={n} exceeds the ranking length {len(ranked_truth)}")
    top = np.asarray(ranked_truth[:n], dtype=np.float64)
    weights = n + 1 - np.arange(1, n + 1)
    return float(weights @ top / (n * (n + 1) / 2.0))


def rank_truth(scores: Sequence[float], truth: Sequence[int]) -> list:
    """Truth indicators ordered by descending score, ties by ascending index."""
    scores = np.asarray(scores, dtype=np.float64)
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    return [int(truth[i]) for i in order]


def confusion(predicted: Sequence[int], truth: Sequence[int]) -> tuple:
    """(tp, tn, fp, fn) for binary predictions; positive means anomalous."""
    p = np.asarray(predicted, dtype=bool)
    t = np.asarray(truth, dtype=bool)
    if p.shape != t.shape:
        raise LengthMismatchError("predictions and truth differ in length")
    return (
        int(np.sum(p & t)),
        int(np.sum(~p & ~t)),
        int(np.sum(p & ~t)),
        int(np.sum(~p & t)),
    )


def mcc(tp: int, tn: int, fp: int, fn: int) -> float:
    """Matthews correlation coefficient; 0 whenever a marginal is empty."""
    if min(tp, tn, fp, fn) < 0:
        raise ValueError("counts must be nonnegative")
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if denom == 0:
        return 0.0
    return float((tp * tn - fp * fn) / math.sqrt(denom))


def roc_curve(scores: Sequence[float], truth: Sequence[int]) -> list:
    """(FPR, TPR) points from a sweep over descending unique scores, starting at (0, 0).

    Tied scores enter at a single threshold.
    """
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.int64)
    if scores.shape != truth.shape:
        raise LengthMismatchError("scores and truth differ in length")
    n_pos = int(truth.sum())
    n_neg = truth.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassTruthError("ROC needs both positive and negative examples")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    t = truth[order]
    tp = np.cumsum(t)
    fp = np.cumsum(1 - t)
    # last index of each tie group
    ends = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    points = [(0.0, 0.0)]
    points += [(fp[e] / n_neg, tp[e] / n_pos) for e in ends]
    return [(float(x), float(y)) for x, y in points]


def auc(roc: Sequence[tuple]) -> float:
    """Trapezoidal area under a list of (FPR, TPR) points."""
    pts = np.asarray(roc, dtype=np.float64)
    return float(trapezoid(pts[:, 1], pts[:, 0]))


def auc_score(scores: Sequence[float], truth: Sequence[int]) -> float:
    return auc(roc_curve(scores, truth))


def accuracy(predicted: Sequence, truth: Sequence) -> float:
    if len(predicted) != len(truth):
        raise LengthMismatchError("predictions and truth differ in length")
    if len(truth) == 0:
        raise ValueError("accuracy of an empty set is undefined")
    return sum(p == t for p, t in zip(predicted, truth)) / len(truth)


def macro_accuracy(predicted: Sequence, truth: Sequence) -> float:
    """Mean over true classes of the per-class fraction correct."""
    if len(predicted) != len(truth):
        raise LengthMismatchError("predictions and truth differ in length")
    per_class = []
    for cls in sorted(set(truth), key=str):
        idx = [i for i, t in enumerate(truth) if t == cls]
        per_class.append(sum(predicted[i] == cls for i in idx) / len(idx))
    return float(np.mean(per_class))


@dataclass(frozen=True)
class CalibrationBin:
    mean_predicted: float
    fraction_positive: float
    count: int
    poisson_error: float


@dataclass(frozen=True)
class CalibrationCurve:
    bins: tuple

    def total(self) -> int:
        return sum(b.count for b in self.bins)


def calibration_curve(probs: Sequence[float], truth: Sequence[int], bin_count: int = 10) -> CalibrationCurve:
    """Reliability diagram on equal-width bins over [0, 1].

    Each bin reports the mean predicted probability (not the bin centre), the
    observed positive fraction k/n, the member count n and sqrt(k)/n.  Empty
    bins are dropped; a probability of exactly 1 falls in the last bin.
    """
    p = np.asarray(probs, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if p.shape != t.shape:
        raise LengthMismatchError("probabilities and truth differ in length")
    if np.any((p < 0.0) | (p > 1.0)):
        raise ValueError("probabilities must lie in [0, 1]")
    idx = np.minimum((p * bin_count).astype(np.int64), bin_count - 1)
    bins = []
    for b in range(bin_count):
        mask = idx == b
        n = int(mask.sum())
        if n == 0:
            continue
        k = float(t[mask].sum())
        bins.append(CalibrationBin(float(p[mask].mean()), k / n, n, math.sqrt(k) / n))
    return CalibrationCurve(tuple(bins))


def weighted_slope(x: Sequence[float], y: Sequence[float], err: Sequence[float]) -> float:
    """Slope of a weighted least-squares line y = a + b x with weights 1/err^2."""
    x, y, err = (np.asarray(v, dtype=np.float64) for v in (x, y, err))
    w = 1.0 / err**2
    xm = np.sum(w * x) / np.sum(w)
    ym = np.sum(w * y) / np.sum(w)
    return float(np.sum(w * (x - xm) * (y - ym)) / np.sum(w * (x - xm) ** 2))
