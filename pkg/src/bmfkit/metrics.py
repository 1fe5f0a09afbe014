"""Evaluation metrics: RMSE, cosine and Pearson similarity, RankIC and precision-recall curves."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import DimensionError, UndefinedMetricError

__all__ = ["PrCurve", "rmse", "cosine_sim", "pearson_sim", "rank_ic", "pr_curve"]


def _pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise DimensionError(f"length mismatch: {x.size} vs {y.size}")
    if x.size == 0:
        raise UndefinedMetricError("empty input")
    return x, y


def rmse(x, y) -> float:
    """Root mean squared difference."""
    x, y = _pair(x, y)
    d = x - y
    return float(np.sqrt(np.mean(d * d)))


def cosine_sim(x, y) -> float:
    """Cosine of the angle between ``x`` and ``y``."""
    x, y = _pair(x, y)
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0 or ny == 0:
        raise UndefinedMetricError("cosine similarity of a zero vector")
    return float(np.clip((x / nx) @ (y / ny), -1.0, 1.0))


def pearson_sim(x, y) -> float:
    """Pearson correlation, i.e. the cosine similarity of the centered vectors."""
    x, y = _pair(x, y)
    xc, yc = x - x.mean(), y - y.mean()
    if not np.any(xc) or not np.any(yc):
        raise UndefinedMetricError("Pearson similarity of a constant vector")
    return cosine_sim(xc, yc)


def rank_ic(alpha, returns) -> float:
    """Spearman correlation between factor values and realized returns; ties get average ranks."""
    a, r = _pair(alpha, returns)
    return pearson_sim(rankdata(a), rankdata(r))


@dataclass
class PrCurve:
    """Precision and recall at each distinct score threshold (ascending).

    Entry ``i`` counts items with ``score >= thresholds[i]`` as positive predictions.
    """

    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray


def pr_curve(scores, labels) -> PrCurve:
    """Precision-recall curve from real scores and binary labels.

    Raises
    ------
    UndefinedMetricError
        If all labels are equal: with no positives recall is undefined, and with
        no negatives the curve carries no information.
    """
    s, lab = _pair(scores, labels)
    if not np.all((lab == 0) | (lab == 1)):
        raise UndefinedMetricError("labels must be 0 or 1")
    pos = int(lab.sum())
    if pos == 0 or pos == lab.size:
        raise UndefinedMetricError("all labels are equal; precision-recall is undefined")
    order = np.argsort(-s, kind="stable")
    s_sorted, l_sorted = s[order], lab[order]
    tp = np.cumsum(l_sorted)
    n_pred = np.arange(1, s.size + 1)
    # keep the last position of each tied score block
    last = np.r_[s_sorted[1:] != s_sorted[:-1], True]
    th = s_sorted[last][::-1]
    precision = (tp[last] / n_pred[last])[::-1]
    recall = (tp[last] / pos)[::-1]
    return PrCurve(th, precision, recall)
