"""Threshold-free ranking metrics for binary discrimination."""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from ..errors import UndefinedMetricError, UsageError


def _inputs(scores: Sequence[float], labels: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise UsageError(f"{s.size} scores but {y.size} labels")
    if not np.all(np.isfinite(s)):
        raise UsageError("scores must be finite")
    if not np.all(np.isin(y, (0, 1))):
        raise UsageError("labels must be 0 or 1")
    return s, y.astype(bool)


def auroc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann-Whitney AUROC with average ranks for ties.

    Equals ``P(score_pos > score_neg) + P(score_pos == score_neg) / 2``.
    """
    s, y = _inputs(scores, labels)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUROC is undefined unless both classes are present")
    ranks = rankdata(s, method="average")
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def aupr(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Average precision: mean over positives of precision at that positive's rank.

    Scores are ranked in descending order; ties keep their input order.
    """
    s, y = _inputs(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise UndefinedMetricError("AUPR is undefined without positives")
    order = np.argsort(-s, kind="stable")
    hits = y[order]
    ranks = np.flatnonzero(hits) + 1
    precision = np.arange(1, n_pos + 1) / ranks
    return float(precision.mean())
