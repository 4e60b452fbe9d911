"""
Validation statistics: benchmark deltas, exact sign and binomial tests,
Wilcoxon signed-rank, TOST equivalence, pairwise dispersion and the
cross-center survival-gap classification.
"""

import math
from fractions import Fraction
from itertools import combinations
from typing import Iterable, List, Sequence

import numpy as np
from scipy import stats

from ..models.validation import CellSummary, GapRecord, GapSummary, PairSurvival, TOSTResult
from ..utils.exceptions import NoEligiblePairsError, ZeroInformativeError

EXACT_BINOMIAL_MAX_N = 64
EXACT_WILCOXON_MAX_N = 25
Z_95 = 1.96


def benchmark_delta(loghr_base: float, loghr_aug: float, loghr_rct: float) -> float:
    """|base - rct| - |aug - rct|; positive when augmentation moves closer."""
    values = (loghr_base, loghr_aug, loghr_rct)
    if not all(math.isfinite(v) for v in values):
        raise ValueError("benchmark_delta needs finite inputs")
    return abs(loghr_base - loghr_rct) - abs(loghr_aug - loghr_rct)


def binomial_test(k: int, n: int, p0: float = 0.5) -> float:
    """
    One-sided exact tail P(X >= k), X ~ Binomial(n, p0).

    Rational arithmetic up to n = 64, scipy's survival function above.
    """
    if n < 1 or not (0 <= k <= n):
        raise ValueError("binomial_test needs n >= 1 and 0 <= k <= n")
    if not (0.0 < p0 < 1.0):
        raise ValueError("p0 must lie in (0, 1)")
    if n <= EXACT_BINOMIAL_MAX_N:
        p = Fraction(p0)
        q = 1 - p
        tail = sum(math.comb(n, j) * p ** j * q ** (n - j) for j in range(k, n + 1))
        return float(tail)
    return float(stats.binom.sf(k - 1, n, p0))


def sign_test(successes: int, n_nonzero: int) -> float:
    """Exact one-sided sign test P(X >= successes | n, 1/2)."""
    if n_nonzero == 0:
        raise ZeroInformativeError("Sign test has no nonzero observations")
    return binomial_test(successes, n_nonzero, 0.5)


def sign_test_deltas(deltas: Iterable[float]) -> tuple:
    """Sign test on deltas with zeros dropped; returns (p, successes, n)."""
    values = np.asarray(list(deltas), dtype=float)
    nonzero = values[values != 0]
    successes = int(np.sum(nonzero > 0))
    return sign_test(successes, len(nonzero)), successes, len(nonzero)


def wilcoxon_null_counts(doubled_ranks: Sequence[int]) -> np.ndarray:
    """Number of sign assignments giving each doubled W+ value."""
    total = int(sum(doubled_ranks))
    counts = np.zeros(total + 1, dtype=np.int64)
    counts[0] = 1
    for r in doubled_ranks:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    return counts


def wilcoxon_signed_rank(deltas: Iterable[float]) -> float:
    """
    One-sided (positive) Wilcoxon signed-rank p-value.

    Zeros are dropped; ties receive average ranks. Exact null distribution
    up to 25 nonzero deltas, normal approximation with continuity
    correction and tie-adjusted variance above.
    """
    values = np.asarray(list(deltas), dtype=float)
    values = values[values != 0]
    n = len(values)
    if n == 0:
        raise ZeroInformativeError("Wilcoxon test has no nonzero deltas")

    ranks = stats.rankdata(np.abs(values))
    w_plus = float(ranks[values > 0].sum())

    if n <= EXACT_WILCOXON_MAX_N:
        doubled = np.rint(2 * ranks).astype(int)
        counts = wilcoxon_null_counts(doubled.tolist())
        observed = int(round(2 * w_plus))
        return float(counts[observed:].sum() / 2.0 ** n)

    mean = n * (n + 1) / 4.0
    variance = float(np.sum(ranks ** 2)) / 4.0
    z = (w_plus - mean - 0.5) / math.sqrt(variance)
    return float(stats.norm.sf(z))


def tost_equivalence(mean_shift: float, se: float, margin: float) -> TOSTResult:
    """
    Equivalent iff mean_shift +/- 1.96*se lies inside (-margin, margin).

    The two conventional one-sided z-test p-values are reported alongside.
    """
    if margin <= 0:
        raise ValueError("margin must be positive")
    if se < 0 or not math.isfinite(se):
        raise ValueError("se must be finite and nonnegative")

    lo, hi = mean_shift - Z_95 * se, mean_shift + Z_95 * se
    if se > 0:
        p_lower = float(stats.norm.sf((mean_shift + margin) / se))
        p_upper = float(stats.norm.cdf((mean_shift - margin) / se))
    else:
        p_lower = 0.0 if mean_shift > -margin else 1.0
        p_upper = 0.0 if mean_shift < margin else 1.0

    return TOSTResult(
        mean_shift=mean_shift,
        se=se,
        margin=margin,
        ci_low=lo,
        ci_high=hi,
        equivalent=(-margin < lo) and (hi < margin),
        p_lower=p_lower,
        p_upper=p_upper,
    )


def pairwise_dispersion(loghrs: Sequence[float]) -> float:
    """Mean absolute difference over all center pairs."""
    values = [float(v) for v in loghrs]
    if len(values) < 2:
        raise ValueError("pairwise dispersion needs at least two centers")
    if not all(math.isfinite(v) for v in values):
        raise ValueError("log-HRs must be finite")
    diffs = [abs(a - b) for a, b in combinations(values, 2)]
    return math.fsum(diffs) / len(diffs)


def gap_record(pair: PairSurvival) -> GapRecord:
    """Orient a pair so that A has the lower crude survival, then take B - A gaps."""
    if pair.raw_x <= pair.raw_y:
        a, b = pair.center_x, pair.center_y
        raw, base, aug = (pair.raw_x, pair.raw_y), (pair.base_x, pair.base_y), (pair.aug_x, pair.aug_y)
    else:
        a, b = pair.center_y, pair.center_x
        raw, base, aug = (pair.raw_y, pair.raw_x), (pair.base_y, pair.base_x), (pair.aug_y, pair.aug_x)
    return GapRecord(
        center_a=a,
        center_b=b,
        d_raw=raw[1] - raw[0],
        d_base=base[1] - base[0],
        d_aug=aug[1] - aug[0],
        ordering_preserved=base[0] < base[1],
    )


def survival_gap_analysis(pairs: Sequence[PairSurvival]) -> GapSummary:
    """
    Classify center pairs and test whether Ũ narrows X-widened gaps.

    Raises:
        NoEligiblePairsError: no pair keeps its ordering with a widened gap
    """
    records = tuple(gap_record(p) for p in pairs)
    return summarize_gaps(records)


def summarize_gaps(records: Sequence[GapRecord]) -> GapSummary:
    """Binomial test of fixed among retained gap records."""
    retained = [r for r in records if r.retained]
    if not retained:
        raise NoEligiblePairsError(
            "No center pair kept its ordering with an X-widened survival gap",
            details={"pairs": len(records)},
        )
    fixed = sum(1 for r in retained if r.fixed_by_u)
    return GapSummary(
        records=tuple(records),
        retained=len(retained),
        fixed=fixed,
        p_value=binomial_test(fixed, len(retained)),
    )


def cell_summary(values: Sequence[float], dataset: str, method: str, metric: str,
                 n_failures: int = 0) -> CellSummary:
    """Mean, standard error (n-1 denominator) and median of a cell."""
    arr = np.asarray(list(values), dtype=float)
    n = len(arr)
    if n == 0:
        raise ValueError("cell summary needs at least one value")
    se = float(np.std(arr, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return CellSummary(
        dataset=dataset,
        method=method,
        metric=metric,
        n=n,
        mean=math.fsum(arr.tolist()) / n,
        se=se,
        median=float(np.median(arr)),
        n_failures=n_failures,
    )


def mean_and_se(values: Sequence[float]) -> List[float]:
    """[mean, SE] with SE = 0 for a single value."""
    arr = np.asarray(list(values), dtype=float)
    mean = math.fsum(arr.tolist()) / len(arr)
    se = float(np.std(arr, ddof=1) / math.sqrt(len(arr))) if len(arr) > 1 else 0.0
    return [mean, se]
