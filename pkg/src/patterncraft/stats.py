"""Paired and unpaired rank tests with exact small-sample distributions.

Signed-rank drops zero differences and uses average ranks for ties; the exact
null distribution (all sign assignments, conditional on the observed ranks)
is used up to 25 pairs, a normal approximation with tie and continuity
corrections beyond. Mann-Whitney U enumerates rank assignments exactly while
the combined sample is small enough, same approximation afterwards.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

EXACT_SIGNED_RANK_MAX = 25
EXACT_MWU_MAX_TOTAL = 16
MIN_PAIRS = 5


class LengthMismatch(ValueError):
    pass


class TooFewPairs(ValueError):
    pass


@dataclass(frozen=True)
class RankTestResult:
    statistic: float
    p_value: float
    method: str          # "exact" | "normal" | "degenerate"
    all_zero: bool = False


def _average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _two_sided_from_counts(counts: np.ndarray, stat_2x: int, total: float) -> float:
    lo = counts[:stat_2x + 1].sum() / total
    hi = counts[stat_2x:].sum() / total
    return float(min(1.0, 2.0 * min(lo, hi)))


def _normal_two_sided(stat: float, mean: float, var: float) -> float:
    if var <= 0:
        return 1.0
    z = (stat - mean)
    z -= math.copysign(min(0.5, abs(z)), z)  # continuity correction toward the mean
    z /= math.sqrt(var)
    return float(math.erfc(abs(z) / math.sqrt(2.0)))


def wilcoxon_signed_rank(a, b) -> RankTestResult:
    """Two-sided paired signed-rank test on the differences a - b."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise LengthMismatch("paired samples must be 1-D and equally long")
    if len(a) < MIN_PAIRS:
        raise TooFewPairs(f"need at least {MIN_PAIRS} pairs, got {len(a)}")
    d = a - b
    d = d[d != 0]
    m = len(d)
    if m == 0:
        return RankTestResult(0.0, 1.0, "degenerate", all_zero=True)
    ranks = _average_ranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    if m <= EXACT_SIGNED_RANK_MAX:
        # twice the ranks are integers, so convolve counts over 2*rank sums
        ranks2 = np.rint(2 * ranks).astype(np.int64)
        total = int(ranks2.sum())
        counts = np.zeros(total + 1, dtype=np.float64)
        counts[0] = 1.0
        for r in ranks2:
            shifted = np.zeros_like(counts)
            shifted[r:] = counts[:len(counts) - r]
            counts = counts + shifted
        p = _two_sided_from_counts(counts, int(round(2 * w_plus)), 2.0 ** m)
        return RankTestResult(w_plus, p, "exact")
    mean = m * (m + 1) / 4.0
    _, tie_counts = np.unique(np.abs(d), return_counts=True)
    tie_term = float(np.sum(tie_counts.astype(np.float64) ** 3 - tie_counts))
    var = m * (m + 1) * (2 * m + 1) / 24.0 - tie_term / 48.0
    return RankTestResult(w_plus, _normal_two_sided(w_plus, mean, var), "normal")


def mann_whitney_u(a, b) -> RankTestResult:
    """Two-sided unpaired Mann-Whitney U test."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1 or len(a) == 0 or len(b) == 0:
        raise LengthMismatch("samples must be non-empty 1-D sequences")
    n1, n2 = len(a), len(b)
    combined = np.concatenate([a, b])
    if np.all(combined == combined[0]):
        return RankTestResult(n1 * n2 / 2.0, 1.0, "degenerate", all_zero=True)
    ranks = _average_ranks(combined)
    u1 = float(ranks[:n1].sum() - n1 * (n1 + 1) / 2.0)
    n = n1 + n2
    if n <= EXACT_MWU_MAX_TOTAL:
        # exact permutation distribution conditional on the observed ranks,
        # tracked at 2x scale so tied (half-integer) ranks stay integral
        ranks2 = np.rint(2 * ranks).astype(np.int64)
        base = n1 * (n1 + 1)  # 2 * n1(n1+1)/2
        u2x = np.array([int(ranks2[list(pick)].sum()) - base
                        for pick in combinations(range(n), n1)])
        counts = np.bincount(u2x).astype(np.float64)
        p = _two_sided_from_counts(counts, int(round(2 * u1)), len(u2x))
        return RankTestResult(u1, p, "exact")
    mean = n1 * n2 / 2.0
    _, tie_counts = np.unique(combined, return_counts=True)
    tie_term = float(np.sum(tie_counts.astype(np.float64) ** 3 - tie_counts))
    var = n1 * n2 / 12.0 * ((n + 1) - tie_term / (n * (n - 1)))
    return RankTestResult(u1, _normal_two_sided(u1, mean, var), "normal")
