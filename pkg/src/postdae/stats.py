"""Wilcoxon signed-rank test with an exact null distribution for small samples."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import DimensionMismatch, TooFewSamples

EXACT_MAX_N = 25
MIN_N = 5


@dataclass(frozen=True)
class PairedSampleSet:
    """Two equal-length samples aligned by key (e.g. image id)."""

    keys: tuple[str, ...]
    values_a: tuple[float, ...]
    values_b: tuple[float, ...]

    def __post_init__(self):
        if not (len(self.keys) == len(self.values_a) == len(self.values_b)):
            raise DimensionMismatch("paired samples must have equal length")
        if len(self.keys) < 1:
            raise TooFewSamples("paired sample set is empty")

    @classmethod
    def from_mappings(cls, a: Mapping[str, float], b: Mapping[str, float]) -> "PairedSampleSet":
        """Pair two ``key -> value`` mappings on their common keys."""
        keys = tuple(sorted(set(a) & set(b)))
        if len(keys) != len(a) or len(keys) != len(b):
            raise DimensionMismatch("paired samples do not share the same keys")
        return cls(keys, tuple(a[k] for k in keys), tuple(b[k] for k in keys))

    @property
    def differences(self) -> np.ndarray:
        return np.asarray(self.values_a, dtype=float) - np.asarray(self.values_b, dtype=float)


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float  # sum of ranks of the positive differences
    pvalue: float
    n: int  # non-zero differences
    exact: bool


def _signed_ranks(diffs: np.ndarray):
    d = np.asarray(diffs, dtype=float)
    d = d[d != 0]
    if len(d) < MIN_N:
        raise TooFewSamples(f"need >= {MIN_N} non-zero differences, got {len(d)}")
    ranks = rankdata(np.abs(d))  # average ranks for ties
    return d, ranks


def exact_null_counts(doubled_ranks: Sequence[int]) -> np.ndarray:
    """Number of sign assignments giving each value of ``2 * T+``.

    Built by convolving in one rank at a time; entry ``k`` counts subsets of
    ranks whose doubled sum is ``k``.
    """
    counts = np.zeros(int(sum(doubled_ranks)) + 1, dtype=np.int64)
    counts[0] = 1
    for r in doubled_ranks:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: len(counts) - r]
        counts = counts + shifted
    return counts


def wilcoxon_test(values_a, values_b=None) -> WilcoxonResult:
    """Two-sided Wilcoxon signed-rank test on ``values_a - values_b``.

    ``values_a`` may also be a :class:`PairedSampleSet` or a sequence of
    differences (``values_b`` omitted). Zero differences are dropped. Uses the
    exact permutation distribution for n <= 25 and a tie-corrected normal
    approximation with continuity correction above.
    """
    if isinstance(values_a, PairedSampleSet):
        diffs = values_a.differences
    elif values_b is None:
        diffs = np.asarray(values_a, dtype=float)
    else:
        a, b = np.asarray(values_a, dtype=float), np.asarray(values_b, dtype=float)
        if a.shape != b.shape:
            raise DimensionMismatch("paired samples must have equal length")
        diffs = a - b
    d, ranks = _signed_ranks(diffs)
    n = len(d)
    t_plus = float(ranks[d > 0].sum())

    if n <= EXACT_MAX_N:
        doubled = np.rint(2 * ranks).astype(np.int64)
        counts = exact_null_counts(doubled)
        t2 = int(round(2 * t_plus))
        total = float(counts.sum())
        lower = counts[: t2 + 1].sum() / total
        upper = counts[t2:].sum() / total
        p = min(1.0, 2.0 * min(lower, upper))
        return WilcoxonResult(t_plus, float(p), n, True)

    mean = n * (n + 1) / 4.0
    _, tie_sizes = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float((tie_sizes**3 - tie_sizes).sum()) / 48.0
    z = max(abs(t_plus - mean) - 0.5, 0.0) / math.sqrt(var)
    # clamp: the p-value stays strictly positive even when erfc underflows
    p = max(math.erfc(z / math.sqrt(2.0)), np.finfo(float).tiny)
    return WilcoxonResult(t_plus, float(min(1.0, p)), n, False)


def wilcoxon_signed_rank(values_a, values_b=None) -> float:
    """Two-sided p-value of :func:`wilcoxon_test`."""
    return wilcoxon_test(values_a, values_b).pvalue
