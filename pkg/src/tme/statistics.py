import numpy as np

from dataclasses import dataclass
from scipy import stats

from utility.errors import DegenerateInputError


EXACT_MAX_SIZE = 8


@dataclass(frozen=True)
class MannWhitneyResult:
    u: float                # statistic of the first sample
    p_value: float          # two-sided
    method: str             # 'exact' or 'asymptotic'


def u_statistic(a: np.ndarray,
                b: np.ndarray) -> float:
    """Pairs with a > b plus half of the tied pairs, from midranks."""
    ranks = stats.rankdata(np.concatenate([a, b]))
    return float(ranks[:len(a)].sum() - len(a) * (len(a) + 1) / 2)


def rank_sum_distribution(doubled_ranks: np.ndarray,
                          k: int) -> np.ndarray:
    """Number of k-subsets per sum of doubled midranks.
    :param doubled_ranks: integer array of 2 x midrank of every observation
    :param k: subset size
    :return
        float64 array indexed by the doubled rank sum
    """
    total = int(np.sort(doubled_ranks)[len(doubled_ranks) - k:].sum())         # largest reachable sum
    ways = np.zeros((k + 1, total + 1), dtype=np.float64)
    ways[0, 0] = 1.0
    for value in doubled_ranks.tolist():
        for j in range(k, 0, -1):
            ways[j, value:] += ways[j - 1, :total + 1 - value]
    return ways[k]


def exact_p_value(a: np.ndarray,
                  b: np.ndarray) -> float:
    """Two-sided p = min(1, 2 min(P(S <= s), P(S >= s))) over all equally likely group assignments of
    the pooled observations, S the rank sum of the smaller sample. Ties keep their midranks.
    """
    small, large = (a, b) if len(a) <= len(b) else (b, a)
    doubled = np.rint(2 * stats.rankdata(np.concatenate([small, large]))).astype(np.int64)
    observed = int(doubled[:len(small)].sum())
    ways = rank_sum_distribution(doubled, len(small))
    total = ways.sum()
    lower = ways[:observed + 1].sum() / total
    upper = ways[observed:].sum() / total
    return float(min(1.0, 2 * min(lower, upper)))


def mann_whitney_u(a,
                   b) -> MannWhitneyResult:
    """Two-sided Mann-Whitney U test.

    Exact over the tie-aware rank-sum distribution when the smaller sample has at most 8 values,
    otherwise the normal approximation with tie and continuity correction.

    :param a: first sample
    :param b: second sample
    :return
        MannWhitneyResult with U of the first sample
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise DegenerateInputError(f"Mann-Whitney U needs two non-empty samples, got sizes {a.size} and {b.size}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise DegenerateInputError("Mann-Whitney U samples contain NaN or Inf")
    u = u_statistic(a, b)
    if min(a.size, b.size) <= EXACT_MAX_SIZE:
        return MannWhitneyResult(u, exact_p_value(a, b), "exact")
    if np.all(np.concatenate([a, b]) == a[0]):
        return MannWhitneyResult(u, 1.0, "asymptotic")
    result = stats.mannwhitneyu(a, b, alternative="two-sided", method="asymptotic", use_continuity=True)
    return MannWhitneyResult(u, float(result.pvalue), "asymptotic")
