"""Paired significance testing and effect sizes for fold-level comparisons."""
from __future__ import annotations

import math

import numpy as np
from scipy.stats import norm, rankdata

EXACT_MAX_N = 25


def signed_rank_null(doubled_ranks):
    """Exact null distribution of the doubled positive-rank sum.

    Returns ``counts`` where ``counts[s]`` is the number of the 2**n sign
    assignments whose positive ranks sum to ``s / 2``.  Ranks are doubled so
    that tie-averaged half ranks stay integral.
    """
    doubled_ranks = [int(r) for r in doubled_ranks]
    total = sum(doubled_ranks)
    counts = np.zeros(total + 1, dtype=object)
    counts[0] = 1
    for r in doubled_ranks:
        counts[r:] = counts[r:] + counts[: total + 1 - r].copy()
    return counts


def wilcoxon_signed_rank(a, b, alternative="greater"):
    """One- or two-sided Wilcoxon signed-rank p-value for paired samples.

    Differences are ``b - a``; ``alternative="greater"`` asks whether ``b``
    tends to exceed ``a``.  Zero differences are dropped, tied absolute
    differences get average ranks, and the p-value is exact (full sign
    enumeration via its rank-sum distribution) for up to 25 non-zero pairs,
    normal-approximated with tie correction beyond that.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("paired samples must have equal length")
    if alternative not in ("greater", "less", "two-sided"):
        raise ValueError(f"unknown alternative {alternative!r}")
    diff = b - a
    diff = diff[diff != 0]
    n = diff.shape[0]
    if n == 0:
        raise ValueError("all paired differences are zero")

    ranks = rankdata(np.abs(diff))
    if n <= EXACT_MAX_N:
        doubled = np.rint(2 * ranks).astype(np.int64)
        counts = signed_rank_null(doubled)
        observed = int(doubled[diff > 0].sum())
        denom = 2**n
        upper = sum(counts[observed:])
        lower = sum(counts[: observed + 1])
        if alternative == "greater":
            return float(upper / denom)
        if alternative == "less":
            return float(lower / denom)
        return float(min(1, 2 * min(upper, lower) / denom))

    t_plus = ranks[diff > 0].sum()
    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_counts**3 - tie_counts) / 48.0
    z = (t_plus - mean) / math.sqrt(var)
    if alternative == "greater":
        return float(norm.sf(z))
    if alternative == "less":
        return float(norm.cdf(z))
    return float(min(1.0, 2 * norm.sf(abs(z))))


def cohens_d_pooled(a, b):
    """(mean(b) - mean(a)) / pooled standard deviation with Bessel correction."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise ValueError("each group needs at least two values")
    na, nb = a.shape[0], b.shape[0]
    pooled = ((na - 1) * a.var(ddof=1) + (nb - 1) * b.var(ddof=1)) / (na + nb - 2)
    if pooled <= 0:
        raise ValueError("pooled variance is zero")
    return float((b.mean() - a.mean()) / math.sqrt(pooled))


def relative_improvement(baseline, value):
    """Percentage change of ``value`` over ``baseline``."""
    if baseline == 0:
        return float("inf") if value > 0 else 0.0
    return 100.0 * (value - baseline) / baseline


def format_improvement(pct):
    return f"{pct:+.1f}%"
