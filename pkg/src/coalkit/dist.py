"""Discrete laws on the nonnegative integers.

Tuple-length laws, their size-biased and tilted transforms, compound Poisson
mass functions and samplers, and total variation distances. Every law is held
as a finite table ``pmf[k]`` for ``k = 0..K`` plus the probability mass that
the truncation dropped (``defect``); downstream code consumes both.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np
from scipy import special, stats

logger = logging.getLogger(__name__)

DEFAULT_TAIL_TOLERANCE = 1e-12
# Poisson weight below which the convolution series is cut off.
_POISSON_CUTOFF = 1e-17

ArrayLike = Union[float, np.ndarray]


class DistributionError(ValueError):
    """Raised for invalid laws or arguments outside an operation's domain."""


def _frozen(arr) -> np.ndarray:
    out = np.array(arr, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class DiscreteLaw:
    """A probability law on ``{0, 1, 2, ...}`` stored as a truncated table.

    ``tail_index`` marks heavy tails: factorial moments of order
    ``>= tail_index`` are infinite. ``None`` means all moments are finite.
    """

    pmf: np.ndarray
    defect: float = 0.0
    kind: str = "custom"
    tail_index: Optional[float] = None
    tail_tolerance: float = DEFAULT_TAIL_TOLERANCE
    label: str = ""

    def __post_init__(self):
        pmf = np.trim_zeros(_frozen(self.pmf), "b")
        if pmf.size == 0:
            raise DistributionError("empty probability table")
        if np.any(pmf < 0) or np.any(pmf > 1 + 1e-15):
            raise DistributionError("probabilities must lie in [0, 1]")
        total = math.fsum(pmf) + self.defect
        if abs(total - 1.0) > max(self.tail_tolerance, 1e-12):
            raise DistributionError(
                f"total mass {total!r} differs from 1 by more than "
                f"tail_tolerance={self.tail_tolerance}"
            )
        pmf.setflags(write=False)
        object.__setattr__(self, "pmf", pmf)
        object.__setattr__(self, "defect", max(float(self.defect), 0.0))

    # -- basic accessors ---------------------------------------------------

    @property
    def kmax(self) -> int:
        return self.pmf.size - 1

    def prob(self, k: int) -> float:
        return float(self.pmf[k]) if 0 <= k <= self.kmax else 0.0

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.pmf > 0)

    @property
    def is_dirac(self) -> bool:
        return self.support.size == 1 and self.defect == 0.0

    @property
    def mean(self) -> float:
        return factorial_moment(self, 1)

    def pgf(self, s: ArrayLike) -> ArrayLike:
        return pgf_eval(self, s)

    def factorial_moment(self, i: int) -> float:
        return factorial_moment(self, i)

    # -- sampling ----------------------------------------------------------

    @cached_property
    def _cdf(self) -> np.ndarray:
        if self.defect > 0:
            logger.debug(
                "renormalizing %s for sampling (dropped tail mass %.3g)",
                self.label or self.kind, self.defect,
            )
        cdf = np.cumsum(self.pmf)
        cdf /= cdf[-1]
        return cdf

    def sample(self, rng: np.random.Generator, size=None):
        """Draw from the table renormalized to total mass one."""
        if self.is_dirac:
            value = int(self.support[0])
            return value if size is None else np.full(size, value, dtype=np.int64)
        u = rng.random(size)
        out = np.searchsorted(self._cdf, u, side="right")
        out = np.minimum(out, self.kmax)
        return int(out) if size is None else out.astype(np.int64)

    def __repr__(self) -> str:
        name = self.label or self.kind
        return f"{type(self).__name__}({name}, kmax={self.kmax}, defect={self.defect:.3g})"


@dataclass(frozen=True, eq=False, repr=False)
class LengthDistribution(DiscreteLaw):
    """A tuple-length law on the positive integers with ``p(1) < 1``."""

    def __post_init__(self):
        super().__post_init__()
        if self.pmf[0] != 0.0:
            raise DistributionError("a tuple-length law must not charge 0")
        if self.prob(1) >= 1.0:
            raise DistributionError("p(1) = 1 gives m* = 0: no coalescence ever happens")

    @property
    def m_star(self) -> float:
        return m_star(self)

    # -- constructors ------------------------------------------------------

    @classmethod
    def dirac(cls, d: int) -> "LengthDistribution":
        d = int(d)
        if d < 1:
            raise DistributionError(f"dirac length must be >= 1, got {d}")
        pmf = np.zeros(d + 1)
        pmf[d] = 1.0
        return cls(pmf, kind="dirac", label=f"dirac:{d}")

    @classmethod
    def logarithmic(cls, a: float, tail_tolerance: float = DEFAULT_TAIL_TOLERANCE):
        """``p(k) = -a^k / (k log(1 - a))`` for ``0 < a < 1``."""
        return cls(*_logarithmic_table(a, tail_tolerance), kind="logarithmic",
                   tail_tolerance=tail_tolerance, label=f"log:{a:g}")

    @classmethod
    def power_law(cls, alpha: float, kmax: Optional[int] = None,
                  tail_tolerance: float = DEFAULT_TAIL_TOLERANCE):
        """``p(k) = k^(-alpha-1) / zeta(alpha+1)``; tail ``P(K > k)`` of order ``k^-alpha``.

        ``kmax`` fixes the table length; otherwise it is the smallest length
        whose dropped tail mass is below ``tail_tolerance``.
        """
        alpha = float(alpha)
        if alpha <= 0:
            raise DistributionError(f"power-law index must be positive, got {alpha}")
        z = special.zeta(alpha + 1.0)

        def tail(k):  # P(K > k)
            return special.zeta(alpha + 1.0, k + 1.0) / z

        explicit = kmax is not None
        if not explicit:
            kmax = max(int((1.0 / (alpha * z * tail_tolerance)) ** (1.0 / alpha)), 1)
            while tail(kmax) > tail_tolerance:
                kmax = int(kmax * 1.1) + 1
            while kmax > 1 and tail(kmax - 1) <= tail_tolerance:
                kmax -= 1
            tol = tail_tolerance
        else:
            kmax = int(kmax)
            tol = max(tail_tolerance, float(tail(kmax)))
        k = np.arange(1, kmax + 1, dtype=float)
        pmf = np.concatenate([[0.0], k ** (-alpha - 1.0) / z])
        label = f"powerlaw:{alpha:g}" + (f":{kmax}" if explicit else "")
        return cls(pmf, defect=float(tail(kmax)), kind="powerlaw", tail_index=alpha,
                   tail_tolerance=tol, label=label)

    @classmethod
    def from_callable(cls, pmf_fn: Callable[[np.ndarray], np.ndarray],
                      tail_fn: Callable[[int], float], tail_index: Optional[float] = None,
                      tail_tolerance: float = DEFAULT_TAIL_TOLERANCE, label: str = "custom"):
        """Tabulate a law given its mass function and tail ``P(K > k)``."""
        kmax = 1
        while tail_fn(kmax) > tail_tolerance:
            kmax *= 2
        lo, hi = kmax // 2, kmax
        while hi - lo > 1:
            mid = (lo + hi) // 2
            lo, hi = (mid, hi) if tail_fn(mid) > tail_tolerance else (lo, mid)
        kmax = max(hi, 1)
        k = np.arange(1, kmax + 1, dtype=float)
        pmf = np.concatenate([[0.0], pmf_fn(k)])
        return cls(pmf, defect=float(tail_fn(kmax)), kind="custom", tail_index=tail_index,
                   tail_tolerance=tail_tolerance, label=label)

    @classmethod
    def from_table(cls, table, label: str = "table"):
        """Build from a ``{k: p(k)}`` mapping; the table is taken as exact."""
        table = {int(k): float(v) for k, v in dict(table).items() if float(v) != 0.0}
        if not table:
            raise DistributionError("empty table")
        if min(table) < 1:
            raise DistributionError("table keys must be positive integers")
        pmf = np.zeros(max(table) + 1)
        for k, v in table.items():
            pmf[k] = v
        return cls(pmf, kind="table", label=label)


def _logarithmic_table(a: float, tol: float):
    a = float(a)
    if not 0.0 < a < 1.0:
        raise DistributionError(f"logarithmic parameter must lie in (0, 1), got {a}")
    c = -1.0 / math.log1p(-a)
    # tail after K is at most c a^(K+1) / ((K+1)(1-a))
    kmax = 1
    while c * a ** (kmax + 1) / ((kmax + 1) * (1 - a)) > tol:
        kmax += 1
    k = np.arange(1, kmax + 1, dtype=float)
    pmf = np.concatenate([[0.0], c * np.exp(k * math.log(a)) / k])
    return pmf, max(1.0 - math.fsum(pmf), 0.0)


@dataclass(frozen=True)
class CompoundPoissonSpec:
    """``CPois(rate, jump)``: a Poisson(rate) number of iid jumps, summed."""

    rate: float
    jump: DiscreteLaw

    def __post_init__(self):
        if not self.rate >= 0 or not math.isfinite(self.rate):
            raise DistributionError(f"compound Poisson rate must be >= 0, got {self.rate}")

    @property
    def mean(self) -> float:
        return self.rate * factorial_moment(self.jump, 1)

    def factorial_moment(self, i: int) -> float:
        """First and second factorial moments of the compound law."""
        m1 = factorial_moment(self.jump, 1)
        if i == 1:
            return self.rate * m1
        if i == 2:
            return self.rate * factorial_moment(self.jump, 2) + (self.rate * m1) ** 2
        raise NotImplementedError("only factorial moments of order 1 and 2")

    def pgf(self, s: ArrayLike) -> ArrayLike:
        return np.exp(self.rate * (_polyval(self.jump.pmf, s) - 1.0))

    def thinned(self) -> "CompoundPoissonSpec":
        """Same law with jumps of size 0 removed and the rate reduced to match."""
        nu0 = self.jump.prob(0)
        if nu0 == 0.0:
            return self
        if nu0 >= 1.0:
            return CompoundPoissonSpec(0.0, self.jump)
        pmf = np.array(self.jump.pmf)
        pmf[0] = 0.0
        jump = DiscreteLaw(pmf / (1.0 - nu0), defect=self.jump.defect / (1.0 - nu0),
                           tail_index=self.jump.tail_index,
                           tail_tolerance=self.jump.tail_tolerance / (1.0 - nu0))
        return CompoundPoissonSpec(self.rate * (1.0 - nu0), jump)


@dataclass(frozen=True, eq=False)
class PmfVector:
    """Masses indexed ``0..K`` plus the mass lying beyond ``K``."""

    probs: np.ndarray
    defect: float = 0.0

    def __post_init__(self):
        probs = _frozen(self.probs)
        object.__setattr__(self, "probs", probs)
        if np.any(probs < 0):
            raise DistributionError("negative mass in pmf vector")

    def __len__(self) -> int:
        return self.probs.size

    def __getitem__(self, k):
        return self.probs[k]

    def cdf(self) -> np.ndarray:
        return np.cumsum(self.probs)


# -- operations --------------------------------------------------------------


def _polyval(coef: np.ndarray, s: ArrayLike) -> ArrayLike:
    return np.polynomial.polynomial.polyval(s, coef)


def pgf_eval(p: DiscreteLaw, s: ArrayLike) -> ArrayLike:
    """Probability generating function ``sum_k p(k) s^k`` on ``[0, 1]``.

    The neglected tail contributes at most ``p.defect``.
    """
    arr = np.asarray(s, dtype=float)
    if np.any(arr < 0) or np.any(arr > 1):
        raise DistributionError("pgf argument must lie in [0, 1]")
    out = _polyval(p.pmf, arr)
    if np.ndim(out) == 0:
        # s = 1 is exactly the normalization, whatever the truncation
        return 1.0 if arr == 1.0 else float(out)
    return np.where(arr == 1.0, 1.0, out)


def _falling(k: np.ndarray, i: int) -> np.ndarray:
    out = np.ones_like(k, dtype=float)
    for r in range(i):
        out *= k - r
    return out


def factorial_moment(p: DiscreteLaw, i: int) -> float:
    """``sum_k k(k-1)...(k-i+1) p(k)``; ``math.inf`` when the series diverges."""
    i = int(i)
    if i < 1:
        raise DistributionError("factorial moment order must be >= 1")
    if p.tail_index is not None and i >= p.tail_index:
        return math.inf
    k = np.arange(p.pmf.size, dtype=float)
    return math.fsum(_falling(k, i) * p.pmf)


def m_star(p: DiscreteLaw) -> float:
    """``m1 - p(1)``: mean number of *other* coordinates per tuple."""
    if p.tail_index is not None and p.tail_index <= 1:
        return math.inf
    # summed from k = 2 directly; m1 - p(1) cancels badly when p(1) dominates
    k = np.arange(2, p.pmf.size, dtype=float)
    return math.fsum(k * p.pmf[2:])


def size_biased(p: DiscreteLaw) -> DiscreteLaw:
    """``p~(k) = (k+1) p(k+1) / m*`` on the positive integers."""
    ms = m_star(p)
    if not ms > 0:
        raise DistributionError("size-biased law needs m* > 0, i.e. p(1) < 1")
    if not math.isfinite(ms):
        raise DistributionError("size-biased law needs a finite mean")
    pmf = np.zeros(max(p.pmf.size - 1, 2))
    k = np.arange(2, p.pmf.size)
    pmf[k - 1] = k * p.pmf[k] / ms
    mass = math.fsum(pmf)
    tail_index = None if p.tail_index is None else p.tail_index - 1.0
    return DiscreteLaw(pmf, defect=max(1.0 - mass, 0.0), kind="size-biased",
                       tail_index=tail_index, tail_tolerance=max(p.tail_tolerance, 1.0 - mass),
                       label=f"sizebiased({p.label or p.kind})")


def tilt(p: DiscreteLaw, a: float) -> DiscreteLaw:
    """``p^_a(k) = a^k p(k) / G_p(a)`` for ``0 < a <= 1``; keeps the class of ``p``."""
    a = float(a)
    if not 0.0 < a <= 1.0:
        raise DistributionError(f"tilt parameter must lie in (0, 1], got {a}")
    if a == 1.0:
        return p
    k = np.arange(p.pmf.size, dtype=float)
    weighted = p.pmf * np.exp(k * math.log(a))
    g = math.fsum(weighted)
    if not g > 0:
        raise DistributionError("G_p(a) = 0: tilt undefined")
    defect = p.defect * a ** p.pmf.size / g
    return type(p)(weighted / g, defect=defect, kind="tilted",
                   tail_tolerance=max(p.tail_tolerance, defect),
                   label=f"tilt({p.label or p.kind},{a:g})")


def _poisson_weights(rate: float, jmax: int) -> np.ndarray:
    j = np.arange(jmax + 1)
    return stats.poisson.pmf(j, rate)


def _poisson_cutoff(rate: float, jmax: int) -> int:
    """Largest useful number of jumps: beyond it the Poisson tail is negligible."""
    if rate == 0:
        return 0
    hi = int(rate + 12.0 * math.sqrt(rate) + 40)
    while stats.poisson.sf(hi, rate) > _POISSON_CUTOFF:
        hi *= 2
    return min(hi, jmax)


def cpois_pmf(spec: CompoundPoissonSpec, kmax: int) -> PmfVector:
    """Mass function of ``CPois(rate, jump)`` on ``0..kmax``.

    Sums ``e^-L L^j/j! jump^{*j}(k)`` over convolution powers of the jump
    law (after removing zero jumps), stopping once the Poisson weight of
    the remaining terms is negligible.
    """
    kmax = int(kmax)
    if kmax < 0:
        raise DistributionError("kmax must be >= 0")
    sp = spec.thinned()
    out = np.zeros(kmax + 1)
    if sp.rate == 0.0:
        out[0] = 1.0
        return PmfVector(out, 0.0)
    nu = np.asarray(sp.jump.pmf[: kmax + 1])
    jmax = _poisson_cutoff(sp.rate, kmax)
    w = _poisson_weights(sp.rate, jmax)
    if sp.jump.is_dirac:
        d = int(sp.jump.support[0])
        j = np.arange(jmax + 1)
        keep = j * d <= kmax
        out[j[keep] * d] = w[keep]
    else:
        row = np.zeros(kmax + 1)
        row[0] = 1.0
        out += w[0] * row
        for j in range(1, jmax + 1):
            row = np.convolve(row, nu)[: kmax + 1]
            if not row.any():
                break
            out += w[j] * row
    return PmfVector(out, max(1.0 - math.fsum(out), 0.0))


def cpois_sample(spec: CompoundPoissonSpec, rng: np.random.Generator, size=None):
    """Draw ``N ~ Poisson(rate)`` then sum ``N`` iid jumps."""
    sp = spec.thinned()
    n_jumps = rng.poisson(sp.rate, size)
    if sp.rate == 0.0:
        return 0 if size is None else np.zeros(size, dtype=np.int64)
    if sp.jump.is_dirac:
        d = int(sp.jump.support[0])
        return int(d * n_jumps) if size is None else d * n_jumps.astype(np.int64)
    if size is None:
        return int(sp.jump.sample(rng, int(n_jumps)).sum())
    n_jumps = np.asarray(n_jumps).ravel()
    jumps = sp.jump.sample(rng, int(n_jumps.sum()))
    owner = np.repeat(np.arange(n_jumps.size), n_jumps)
    sums = np.bincount(owner, weights=jumps, minlength=n_jumps.size)
    return sums.astype(np.int64).reshape(np.empty(size, dtype=np.int8).shape)


def _as_masses(x):
    if hasattr(x, "probs"):  # PmfVector, ProgenyPmf
        return np.asarray(x.probs), x.defect
    if isinstance(x, DiscreteLaw):
        return np.asarray(x.pmf), x.defect
    return np.asarray(x, dtype=float), 0.0


def tv_distance(nu1, nu2) -> float:
    """Total variation distance, padding the shorter table with zeros.

    Masses dropped by truncation enter as half the difference of defects.
    """
    a, da = _as_masses(nu1)
    b, db = _as_masses(nu2)
    size = max(a.size, b.size)
    a = np.pad(a, (0, size - a.size))
    b = np.pad(b, (0, size - b.size))
    return 0.5 * math.fsum(np.abs(a - b)) + 0.5 * abs(da - db)


def empirical_pmf(samples) -> np.ndarray:
    samples = np.asarray(samples, dtype=np.int64)
    return np.bincount(samples) / samples.size


# -- mini-language -----------------------------------------------------------


def _read_table(path: str) -> dict:
    table = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t") if "\t" in line else line.split()
        if len(parts) != 2:
            raise DistributionError(f"{path}:{lineno}: expected 'k<TAB>p(k)'")
        table[int(parts[0])] = float(parts[1])
    return table


def parse_law(text: str, *, length: bool = True) -> DiscreteLaw:
    """Parse ``dirac:<d>``, ``log:<a>``, ``powerlaw:<alpha>[:<kmax>]`` or ``table:<path>``.

    With ``length=True`` the result is a validated tuple-length law; with
    ``length=False`` it is a jump law on ``{0, 1, ...}`` (``dirac:1`` allowed).
    """
    kind, _, rest = text.strip().partition(":")
    try:
        if kind == "dirac":
            d = int(rest)
            if length:
                return LengthDistribution.dirac(d)
            if d < 0:
                raise DistributionError("dirac jump must be >= 0")
            pmf = np.zeros(d + 1)
            pmf[d] = 1.0
            return DiscreteLaw(pmf, kind="dirac", label=f"dirac:{d}")
        if kind == "log":
            law = LengthDistribution.logarithmic(float(rest))
        elif kind == "powerlaw":
            alpha, _, kmax = rest.partition(":")
            law = LengthDistribution.power_law(float(alpha), int(kmax) if kmax else None)
        elif kind == "table":
            table = _read_table(rest)
            if length:
                return LengthDistribution.from_table(table, label=text)
            pmf = np.zeros(max(table) + 1)
            for k, v in table.items():
                if k < 0:
                    raise DistributionError("table keys must be nonnegative")
                pmf[k] = v
            return DiscreteLaw(pmf, kind="table", label=text)
        else:
            raise DistributionError(f"unknown distribution spec {text!r}")
    except (TypeError, ValueError) as exc:
        if isinstance(exc, DistributionError):
            raise
        raise DistributionError(f"malformed distribution spec {text!r}: {exc}") from exc
    if length:
        return law
    return DiscreteLaw(law.pmf, defect=law.defect, kind=law.kind, tail_index=law.tail_index,
                       tail_tolerance=law.tail_tolerance, label=law.label)
