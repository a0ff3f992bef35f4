"""Galton-Watson processes with compound Poisson offspring.

Offspring laws are ``CPois(rate, jump)``. The total progeny started from
``u`` ancestors is computed through the hitting-time (Dwass) formula

    P(T = k) = (u / k) P(S_k = k - u),   S_k ~ CPois(k * rate, jump),

with the convolution powers of the jump law shared across all ``k``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import optimize, signal, stats

from .dist import (CompoundPoissonSpec, DiscreteLaw, DistributionError, LengthDistribution,
                   cpois_pmf, cpois_sample, factorial_moment, m_star, pgf_eval, size_biased,
                   tilt)

log = logging.getLogger(__name__)

OVERFLOW = -1
# Direct convolution below this many support points, FFT above.
_DIRECT_SUPPORT = 64
# Elements per block of walk steps drawn at once in simulate_progeny_many.
_STEP_BLOCK = 1 << 21


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class BGWSpec:
    """``u`` ancestors, offspring law ``CPois(rate, jump)``."""

    u: int
    offspring: CompoundPoissonSpec

    def __post_init__(self):
        if int(self.u) != self.u or self.u < 1:
            raise DistributionError(f"number of ancestors must be a positive integer, got {self.u}")

    @classmethod
    def limiting(cls, p: LengthDistribution, t: float, u: int = 1) -> "BGWSpec":
        """The process ``CPois(t m*, p~)`` approximating block sizes at time ``n t``."""
        return cls(u, CompoundPoissonSpec(t * m_star(p), size_biased(p)))

    @property
    def rate(self) -> float:
        return self.offspring.rate

    @property
    def jump(self) -> DiscreteLaw:
        return self.offspring.jump


@dataclass(frozen=True, eq=False)
class ProgenyPmf:
    """``P(T = k)`` for ``k <= kmax`` (zeros below ``u``).

    The missing mass splits into ``nonextinction = 1 - q^u`` (the walk never
    hits) and ``truncation`` (finite values beyond ``kmax``).
    """

    u: int
    probs: np.ndarray
    q: float
    nonextinction: float
    truncation: float

    @property
    def kmax(self) -> int:
        return self.probs.size - 1

    @property
    def defect(self) -> float:
        return self.nonextinction + self.truncation

    def __getitem__(self, k):
        return self.probs[k]

    def cdf(self) -> np.ndarray:
        return np.cumsum(self.probs)

    def tail(self, k: int) -> float:
        """``P(k < T < infinity)`` from the recorded masses."""
        return max(self.q ** self.u - math.fsum(self.probs[: k + 1]), 0.0)

    def to_csv(self, fh, meta: Optional[dict] = None) -> None:
        """Rows ``k,P(T=k)`` preceded by ``# key: value`` metadata lines."""
        header = {"u": self.u, "q": repr(self.q), "defect": repr(self.defect),
                  "nonextinction": repr(self.nonextinction), "truncation": repr(self.truncation)}
        header.update(meta or {})
        for key, value in header.items():
            fh.write(f"# {key}: {value}\n")
        w = csv.writer(fh)
        w.writerow(["k", "P(T=k)"])
        for k in range(self.u, self.probs.size):
            w.writerow([k, repr(float(self.probs[k]))])


def _convolve(a: np.ndarray, b: np.ndarray, size: int, fft: bool) -> np.ndarray:
    if fft:
        out = signal.fftconvolve(a, b)[:size]
        return np.clip(out, 0.0, None)
    return np.convolve(a, b)[:size]


def total_progeny_pmf(spec: BGWSpec, kmax: int) -> ProgenyPmf:
    """Exact law of the total progeny on ``u..kmax`` via the Dwass formula."""
    u = spec.u
    kmax = int(kmax)
    if kmax < u:
        raise DistributionError(f"kmax must be >= u = {u}")
    sp = spec.offspring.thinned()
    lam = sp.rate
    probs = np.zeros(kmax + 1)
    q = extinction_prob(spec.offspring)
    if lam == 0.0:
        probs[u] = 1.0
        return ProgenyPmf(u, probs, 1.0, 0.0, 0.0)
    k = np.arange(u, kmax + 1)
    m = k - u  # offspring total needed for the walk to hit 0 at step k
    jump = sp.jump
    if jump.is_dirac:
        d = int(jump.support[0])
        ok = m % d == 0
        probs[k[ok]] = (u / k[ok]) * stats.poisson.pmf(m[ok] // d, k[ok] * lam)
    else:
        size = kmax - u + 1
        nu = np.asarray(jump.pmf[:size], dtype=float)
        fft = np.count_nonzero(nu) > _DIRECT_SUPPORT
        smallest = int(jump.support[0])
        acc = np.zeros(k.size)
        acc[0] = math.exp(-u * lam)  # j = 0 contributes only at m = 0
        power = np.zeros(size)
        power[0] = 1.0
        rates = k * lam
        for j in range(1, size):
            if j * smallest > size - 1:
                break
            power = _convolve(power, nu, size, fft)
            lo = j * smallest
            acc[lo:] += stats.poisson.pmf(j, rates[lo:]) * power[lo:]
        probs[u:] = (u / k) * acc
    total = math.fsum(probs)
    nonext = 1.0 - q ** u
    trunc = max(q ** u - total, 0.0)
    return ProgenyPmf(u, probs, q, nonext, trunc)


def simulate_progeny_many(spec: BGWSpec, cap: int, rng: np.random.Generator,
                          size: int, escape_tol: float = 1e-16) -> np.ndarray:
    """Independent hitting times ``min{k : X_1 + ... + X_k = k - u}``.

    Each ``X_i ~ CPois(rate, jump)``; runs still alive after ``cap`` steps
    are reported as :data:`OVERFLOW`. In the supercritical case a walk with
    ``A`` active individuals ever returns to 0 with probability ``q^A``; once
    that falls below ``escape_tol`` the run is reported as overflow at once
    (``escape_tol=0`` disables the shortcut).
    """
    cap = int(cap)
    if cap < spec.u:
        raise DistributionError("cap must be >= u")
    escape = np.iinfo(np.int64).max
    if escape_tol > 0 and spec.offspring.mean > 1.0:
        q = extinction_prob(spec.offspring)
        if q < 1.0:
            escape = max(1, math.ceil(math.log(escape_tol) / math.log(q))) if q > 0 else 1
    out = np.full(size, OVERFLOW, dtype=np.int64)
    alive = np.arange(size)
    active = np.full(size, spec.u, dtype=np.int64)
    done = 0
    block = 32
    while alive.size and done < cap:
        b = max(1, min(block, cap - done, _STEP_BLOCK // alive.size))
        steps = cpois_sample(spec.offspring, rng, (alive.size, b)) - 1
        path = active[:, None] + np.cumsum(steps, axis=1)
        hit = path <= 0  # steps are >= -1, so the first hit is exactly 0
        has = hit.any(axis=1)
        out[alive[has]] = done + hit[has].argmax(axis=1) + 1
        active = path[~has, -1]
        alive = alive[~has]
        keep = active < escape
        active = active[keep]
        alive = alive[keep]
        done += b
        block *= 2
    return out


def simulate_progeny(spec: BGWSpec, cap: int, rng: np.random.Generator) -> int:
    """One total-progeny draw, or :data:`OVERFLOW` beyond ``cap``."""
    return int(simulate_progeny_many(spec, cap, rng, 1)[0])


def extinction_prob(offspring: CompoundPoissonSpec, tol: float = 1e-12) -> float:
    """Smallest root of ``exp(rate (G_jump(x) - 1)) = x`` in ``(0, 1]``."""
    if offspring.mean <= 1.0:
        return 1.0

    def f(x):
        return math.exp(offspring.rate * (pgf_eval(offspring.jump, x) - 1.0))

    x = 0.0
    for _ in range(100_000):
        nxt = f(x)
        if abs(nxt - x) < tol:
            return nxt
        if nxt - x < 1e-15:
            break
        x = nxt
    # slow near criticality: bracket the root and finish by bisection-type search
    lo = x
    hi = 0.5 * (1.0 + lo)
    while f(hi) - hi >= 0.0:
        lo = hi
        hi = 0.5 * (1.0 + hi)
        if 1.0 - hi < 1e-15:
            raise ConvergenceError("could not bracket the extinction probability")
    q = optimize.brentq(lambda y: f(y) - y, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    if abs(f(q) - q) > tol:
        raise ConvergenceError(f"extinction fixed point residual {abs(f(q) - q):.3g}")
    return q


def _cpois_moments(offspring: CompoundPoissonSpec) -> Tuple[float, float, float]:
    m1 = offspring.factorial_moment(1)
    m2 = offspring.factorial_moment(2)
    mass0 = float(cpois_pmf(offspring, 0)[0])
    return m1, m2, mass0


def survival_bounds(offspring: CompoundPoissonSpec) -> Tuple[float, float]:
    """``2(m1-1)/m2 <= 1 - q <= (m1-1)/(m1-1+mass at 0)`` for the offspring law."""
    m1, m2, mass0 = _cpois_moments(offspring)
    if not m1 > 1.0:
        raise DistributionError(f"survival bounds need mean > 1, got {m1}")
    lower = 2.0 * (m1 - 1.0) / m2 if math.isfinite(m2) else 0.0
    upper = (m1 - 1.0) / (m1 - 1.0 + mass0)
    return lower, upper


def pgf_bounds(nu: DiscreteLaw, s) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(lower, G(s) - 1 - (s-1) m1, upper)`` of the quadratic pgf sandwich."""
    s = np.asarray(s, dtype=float)
    m1 = factorial_moment(nu, 1)
    m2 = factorial_moment(nu, 2)
    middle = pgf_eval(nu, s) - 1.0 - (s - 1.0) * m1
    lower = (m1 - 1.0 + nu.prob(0)) * (s - 1.0) ** 2
    upper = 0.5 * m2 * (s - 1.0) ** 2
    return lower, middle, upper


def dual_spec(offspring: CompoundPoissonSpec) -> CompoundPoissonSpec:
    """Offspring law of the supercritical process conditioned on extinction."""
    if offspring.mean <= 1.0:
        raise DistributionError("dual process is defined for supercritical offspring only")
    q = extinction_prob(offspring)
    return CompoundPoissonSpec(offspring.rate * pgf_eval(offspring.jump, q),
                               tilt(offspring.jump, q))


def tilted_spec(spec: BGWSpec, a: float) -> BGWSpec:
    """``(u, rate G_jump(a), jump tilted by a)``."""
    off = spec.offspring
    return BGWSpec(spec.u, CompoundPoissonSpec(off.rate * pgf_eval(off.jump, a), tilt(off.jump, a)))


def tilted_progeny_check(spec: BGWSpec, a: float, kmax: int) -> float:
    """Largest gap in ``P(T^_a = k) = a^(k-u) e^(k rate (1 - G(a))) P(T = k)``, ``k <= kmax``."""
    if not 0.0 < a <= 1.0:
        raise DistributionError("a must lie in (0, 1]")
    base = total_progeny_pmf(spec, kmax)
    tilted = total_progeny_pmf(tilted_spec(spec, a), kmax)
    k = np.arange(spec.u, kmax + 1)
    g = pgf_eval(spec.jump, a)
    rhs = np.exp((k - spec.u) * math.log(a) + k * spec.rate * (1.0 - g)) * base.probs[spec.u:]
    return float(np.max(np.abs(tilted.probs[spec.u:] - rhs)))


def cpois_tilt_residual(offspring: CompoundPoissonSpec, a: float, kmax: int) -> float:
    """Largest gap in ``CPois(rate G(a), jump^_a)(k) = a^k e^(rate (1 - G(a))) CPois(rate, jump)(k)``."""
    g = pgf_eval(offspring.jump, a)
    left = cpois_pmf(CompoundPoissonSpec(offspring.rate * g, tilt(offspring.jump, a)), kmax).probs
    k = np.arange(kmax + 1)
    right = np.exp(k * math.log(a) + offspring.rate * (1.0 - g)) * cpois_pmf(offspring, kmax).probs
    return float(np.max(np.abs(left - right)))


def _radius(nu: DiscreteLaw) -> float:
    """Radius of convergence of the jump pgf, estimated from the table."""
    if nu.tail_index is not None:
        return 1.0
    if nu.defect == 0.0:
        return math.inf
    # root test on the last stored terms of an infinite light tail
    k = nu.support[-5:]
    return float(np.min(nu.pmf[k] ** (-1.0 / k)))


def cramer_rate(offspring: CompoundPoissonSpec) -> float:
    """``sup_theta (theta - rate (G_jump(e^theta) - 1))`` for a subcritical law."""
    if offspring.mean >= 1.0:
        raise DistributionError("Cramer rate at 1 needs mean < 1")
    nu = offspring.jump
    lam = offspring.rate
    if lam == 0.0:
        return math.inf
    radius = _radius(nu)
    if radius <= 1.0:
        raise DistributionError("jump law has no exponential moment")
    coef = np.asarray(nu.pmf, dtype=float)
    deriv = np.polynomial.polynomial.polyder(coef)

    def value(s):
        return math.log(s) - lam * (np.polynomial.polynomial.polyval(s, coef) - 1.0)

    def slope(s):  # d/dtheta at theta = log s
        return 1.0 - lam * s * np.polynomial.polynomial.polyval(s, deriv)

    hi = 2.0
    while slope(hi) > 0.0:
        if hi >= radius:
            log.warning("Cramer optimum at the edge of the pgf domain (radius %.6g)", radius)
            return value(min(hi, radius))
        hi = min(2.0 * hi, radius) if math.isfinite(radius) else 2.0 * hi
    s_star = optimize.brentq(slope, 1.0, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps)
    return float(value(s_star))


def lattice_span(nu: DiscreteLaw) -> int:
    """gcd of the positive support points of ``nu``."""
    pos = [int(k) for k in nu.support if k > 0]
    if not pos:
        raise DistributionError("lattice span undefined for a law concentrated at 0")
    return math.gcd(*pos)


def local_clt_error(nu: DiscreteLaw, n: int, rates: Sequence[float] = (0.5, 1.5),
                    grid: int = 11) -> float:
    """``sup_rate sup_k sqrt(n) |P(S_n = kr) - Gaussian lattice density|``.

    ``S_n ~ CPois(n rate, nu)``; ``rates`` is the interval ``[a, b]`` scanned
    on ``grid`` equally spaced points, ``r`` the lattice span of ``nu``.
    """
    r = lattice_span(nu)
    m1 = factorial_moment(nu, 1)
    m2 = factorial_moment(nu, 2)
    if not math.isfinite(m2):
        raise DistributionError("local CLT needs a finite second moment")
    worst = 0.0
    for lam in np.linspace(rates[0], rates[1], grid):
        mean = n * lam * m1
        var = n * lam * (m2 + m1)
        kmax = int(mean + 12 * math.sqrt(var) + 20)
        pmf = cpois_pmf(CompoundPoissonSpec(n * lam, nu), kmax).probs
        x = np.arange(0, kmax + 1, r)
        gauss = r / math.sqrt(2 * math.pi * var) * np.exp(-(x - mean) ** 2 / (2 * var))
        worst = max(worst, math.sqrt(n) * float(np.max(np.abs(pmf[x] - gauss))))
    return worst
