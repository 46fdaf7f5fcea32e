"""Ranking metrics: AUC by rank statistics and impression-weighted group AUC."""

from __future__ import annotations

from typing import Optional

import numpy as np

from .errors import UndefinedMetricError


def _average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their mean rank."""
    order = np.argsort(x, kind="mergesort")
    sorted_x = x[order]
    # boundaries of runs of equal values
    starts = np.concatenate([[0], np.flatnonzero(np.diff(sorted_x) != 0) + 1])
    ends = np.concatenate([starts[1:], [len(x)]])
    mean_rank = (starts + ends + 1) / 2.0
    ranks = np.empty(len(x))
    ranks[order] = np.repeat(mean_rank, ends - starts)
    return ranks


def auc(scores, labels) -> float:
    """P(random positive outscores random negative), ties counting one half."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both positive and negative labels")
    ranks = _average_ranks(s)
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def gauc(scores, labels, groups, weights: Optional[np.ndarray] = None) -> float:
    """Weighted mean of per-group AUC.

    Weights default to impressions (rows) per group. Groups with a single
    class are left out of both numerator and denominator. With explicit
    ``weights`` one value per group is expected, aligned with the sorted
    unique group ids.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    g = np.asarray(groups)
    uniq, inverse = np.unique(g, return_inverse=True)
    if weights is not None:
        weights = np.asarray(weights, dtype=np.float64)
        if len(weights) != len(uniq):
            raise ValueError(f"expected {len(uniq)} group weights, got {len(weights)}")
    order = np.argsort(inverse, kind="mergesort")
    bounds = np.concatenate([[0], np.cumsum(np.bincount(inverse, minlength=len(uniq)))])
    num = 0.0
    den = 0.0
    for j in range(len(uniq)):
        rows = order[bounds[j]:bounds[j + 1]]
        yg = y[rows]
        if yg.all() or not yg.any():
            continue
        w = len(rows) if weights is None else weights[j]
        num += w * auc(s[rows], yg)
        den += w
    if den == 0:
        raise UndefinedMetricError("GAUC needs at least one group containing both classes")
    return float(num / den)
