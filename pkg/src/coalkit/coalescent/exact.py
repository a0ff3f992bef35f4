"""Closed-form finite-n quantities of the coalescent."""

from __future__ import annotations

import itertools
import math

import mpmath
import numpy as np

from ..dist import DistributionError, LengthDistribution, pgf_eval
from .partition import Partition, as_partition

# Largest n for which the alternating singleton sum is evaluated.
SINGLETON_PMF_MAX_N = 60


def merge_rate_sizes(sizes, n: int, p: LengthDistribution) -> float:
    """Rate of the transition merging blocks of the given sizes into one.

    Inclusion-exclusion over sub-collections ``K`` of the merged blocks:
    ``sum_K (-1)^(|J|-|K|) G_p(|B_K| / n)``.
    """
    sizes = [int(s) for s in sizes]
    if len(sizes) < 2:
        raise DistributionError("a merge involves at least two blocks")
    if min(sizes) < 1 or sum(sizes) > n:
        raise DistributionError("block sizes must be positive and sum to at most n")
    j = len(sizes)
    terms = []
    for r in range(1, j + 1):
        sign = -1.0 if (j - r) % 2 else 1.0
        for combo in itertools.combinations(sizes, r):
            terms.append(sign * pgf_eval(p, sum(combo) / n))
    return max(math.fsum(terms), 0.0)


def merge_rate(partition: Partition, blocks, p: LengthDistribution, n: int = None) -> float:
    """Transition rate from ``partition`` to the partition merging ``blocks``.

    ``blocks`` are block ids (any element of each block may be used).
    """
    blocks = list(blocks)
    roots = {partition.find(b) for b in blocks}
    if len(roots) != len(blocks):
        raise DistributionError("block ids must name distinct blocks")
    n = partition.n if n is None else n
    return merge_rate_sizes([partition.size[r] for r in roots], n, p)


def finer_than_prob(pi0, pi, p: LengthDistribution, t: float, n: int = None) -> float:
    """``P(Pi(t) finer than pi | Pi(0) = pi0)``."""
    pi0 = as_partition(pi0, n)
    pi = as_partition(pi, pi0.n)
    if not pi0.is_finer_than(pi):
        return 0.0
    g = math.fsum(pgf_eval(p, s / pi.n) for s in pi.block_sizes())
    return math.exp(-t * (1.0 - g))


def singleton_count_pmf(n: int, p: LengthDistribution, t: float, k: int) -> float:
    """``P(Y = k)`` for the number ``Y`` of singleton blocks at time ``t``.

    Evaluated in extended precision; the alternating sum is only offered for
    ``n <= 60`` (use :func:`coalkit.coalescent.batch.singleton_counts_mc` beyond).
    """
    return float(singleton_count_distribution(n, p, t)[k])


def singleton_count_distribution(n: int, p: LengthDistribution, t: float) -> np.ndarray:
    """The whole vector ``P(Y = k)``, ``k = 0..n``."""
    if n > SINGLETON_PMF_MAX_N:
        raise DistributionError(
            f"exact singleton pmf limited to n <= {SINGLETON_PMF_MAX_N}; "
            "use the Monte Carlo estimator singleton_counts_mc instead"
        )
    if n < 1 or t < 0:
        raise DistributionError("need n >= 1 and t >= 0")
    support = p.support.tolist()
    masses = [mpmath.mpf(float(p.pmf[k])) for k in support]

    def pgf(s):
        return mpmath.fsum(c * s ** k for c, k in zip(masses, support))

    with mpmath.workdps(40 + n):
        g1 = pgf(mpmath.mpf(1) / n)
        # weight[m] = P(no nontrivial tuple meets a fixed m-set)
        weight = [mpmath.exp(-t * (1 - pgf(1 - mpmath.mpf(m) / n) - m * g1))
                  for m in range(n + 1)]
        out = []
        for k in range(n + 1):
            acc = mpmath.mpf(0)
            for j in range(n - k + 1):
                term = mpmath.binomial(n, k) * mpmath.binomial(n - k, j) * weight[k + j]
                acc += -term if j % 2 else term
            out.append(float(acc))
    return np.clip(np.array(out), 0.0, 1.0)


def restriction_factor(p: LengthDistribution, t: float, n: int, m: int, k: int) -> float:
    """Ratio between block-size laws of the process restricted to an ``m``-subset and the full one.

    ``prod_{i<k} (m-i)/(n-i) * exp(t(1 - G(1-k/n) - G(m/n) + G((m-k)/n)))``,
    which vanishes for ``k >= m + 1``.
    """
    if not (1 <= k <= n and 1 <= m <= n):
        raise DistributionError("need 1 <= k <= n and 1 <= m <= n")
    if k > m:
        return 0.0
    pre = 1.0
    for i in range(1, k):
        pre *= (m - i) / (n - i)
    expo = 1.0 - pgf_eval(p, 1.0 - k / n) - pgf_eval(p, m / n) + pgf_eval(p, (m - k) / n)
    return pre * math.exp(t * expo)


def block_of(partition: Partition, x: int):
    return partition.block_of(x)
