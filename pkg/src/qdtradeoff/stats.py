"""Wilcoxon signed-rank test and Holm-Bonferroni adjustment."""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy.stats import norm, rankdata

EXACT_MAX_N = 20
MIN_PAIRS = 5


def _exact_tail_counts(doubled_ranks: np.ndarray) -> np.ndarray:
    """Number of sign assignments reaching each doubled positive-rank sum."""
    total = int(doubled_ranks.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in doubled_ranks:
        r = int(r)
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    return counts


def paired_rank_test(scores_a: Sequence[float], scores_b: Sequence[float]) -> float:
    """Two-sided signed-rank p-value for paired samples.

    Zero differences are dropped and tied magnitudes get mid-ranks. Up to
    20 non-zero pairs the null distribution is counted exactly over all
    sign assignments; above that a tie-corrected normal approximation is
    used. If every difference is zero there is no evidence and ``p = 1``.
    """
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired samples must be 1-D and of equal length")
    if len(a) < MIN_PAIRS:
        raise ValueError(f"need at least {MIN_PAIRS} pairs, got {len(a)}")
    d = a - b
    d = d[d != 0]
    n = len(d)
    if n == 0:
        return 1.0
    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    if n <= EXACT_MAX_N:
        doubled = np.rint(2 * ranks).astype(np.int64)
        counts = _exact_tail_counts(doubled)
        w2 = int(round(2 * w_plus))
        lower = counts[: w2 + 1].sum()
        upper = counts[w2:].sum()
        return float(min(1.0, 2.0 * min(lower, upper) / 2.0**n))
    mean = n * (n + 1) / 4.0
    _, tie_sizes = np.unique(np.abs(d), return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float((tie_sizes**3 - tie_sizes).sum()) / 48.0
    if var <= 0:
        return 1.0
    z = (w_plus - mean) / math.sqrt(var)
    return float(min(1.0, 2.0 * norm.sf(abs(z))))


def holm_bonferroni(pvalues: Sequence[float]) -> list[float]:
    """Step-down adjusted p-values, returned in input order."""
    p = np.asarray(pvalues, dtype=np.float64)
    m = len(p)
    if m == 0:
        return []
    order = np.argsort(p, kind="stable")
    scaled = np.minimum(1.0, (m - np.arange(m)) * p[order])
    adjusted = np.empty(m)
    adjusted[order] = np.maximum.accumulate(scaled)
    return adjusted.tolist()
