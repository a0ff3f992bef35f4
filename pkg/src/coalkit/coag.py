"""Multi-particle coagulation equations with multiplicative kernel.

``d rho_k / dt = sum_j p(j) K_j(rho, k)`` where ``K_j`` gains from the
``j``-fold convolution of ``(i rho_i)`` and loses ``j k rho_k``. The system is
truncated at ``K_max``; mass pushed beyond ``K_max`` is booked as gel.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence

import numpy as np
from scipy import signal
from scipy.special import gammaln

from .bgw import BGWSpec, total_progeny_pmf
from .coalescent.engine import _with_file
from .dist import DistributionError, LengthDistribution, factorial_moment

log = logging.getLogger(__name__)

NEGATIVE_SLACK = 1e-12
# Real-axis stability limit of classical RK4; the stiffest mode decays at rate K_max sum_j j p(j).
RK4_STABILITY = 2.785
# Above this size the convolutions switch to FFT.
_DIRECT_MAX = 512


class CoagulationError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class CoagState:
    """Densities ``rho[k]`` for ``k = 1..K_max`` (``rho[0]`` is unused and 0)."""

    rho: np.ndarray
    t: float = 0.0
    gel_mass: float = 0.0

    @classmethod
    def monodisperse(cls, kmax: int) -> "CoagState":
        rho = np.zeros(kmax + 1)
        rho[1] = 1.0
        return cls(rho, 0.0, 0.0)

    @property
    def kmax(self) -> int:
        return self.rho.size - 1

    @property
    def m1(self) -> float:
        return float(np.dot(np.arange(self.rho.size), self.rho))

    @property
    def m2(self) -> float:
        k = np.arange(self.rho.size, dtype=float)
        return float(np.dot(k * k, self.rho))


def _densities(rho) -> np.ndarray:
    return np.asarray(rho.rho if isinstance(rho, CoagState) else rho, dtype=float)


def _conv(a: np.ndarray, b: np.ndarray, size: int) -> np.ndarray:
    if size > _DIRECT_MAX:
        out = signal.fftconvolve(a, b)[:size]
        # entries below the FFT round-off floor are indistinguishable from 0
        floor = 64 * np.finfo(float).eps * np.abs(a).sum() * np.abs(b).sum()
        out[out < floor] = 0.0
        return out
    return np.convolve(a, b)[:size]


def kernel_all(rho, j: int) -> np.ndarray:
    """``K_j(rho, k)`` for every ``k = 0..K_max`` (entry 0 is 0)."""
    if j < 2:
        raise DistributionError("kernel order j must be >= 2")
    r = _densities(rho)
    size = r.size
    k = np.arange(size, dtype=float)
    a = k * r
    power = a
    for _ in range(j - 1):
        power = _conv(power, a, size)
    # a[0] = 0, so power[k] already vanishes for k < j
    return power - j * k * r


def kernel_Kj(rho, k: int, j: int) -> float:
    """``K_j(rho, k)``: ``j``-fold composition gain minus ``j k rho_k``."""
    r = _densities(rho)
    if k < 1:
        raise DistributionError("k must be >= 1")
    if k >= r.size:
        raise DistributionError("k beyond the truncation of the state")
    if k < j:
        return -j * k * float(r[k])
    return float(kernel_all(r, j)[k])


def _weights(p: LengthDistribution, kmax: int) -> np.ndarray:
    top = min(kmax, p.kmax)
    w = np.zeros(top + 1)
    w[2:] = p.pmf[2:top + 1]
    return w


def _rhs(r: np.ndarray, w: np.ndarray) -> np.ndarray:
    size = r.size
    k = np.arange(size, dtype=float)
    a = k * r
    gain = np.zeros(size)
    power = a
    for j in range(2, w.size):
        power = _conv(power, a, size)
        if w[j]:
            gain += w[j] * power
    loss_rate = float(np.dot(np.arange(w.size), w))
    return gain - loss_rate * a


def rhs(rho, p: LengthDistribution) -> np.ndarray:
    """``d rho / dt`` at state ``rho`` (index 0 unused)."""
    r = _densities(rho)
    return _rhs(r, _weights(p, r.size - 1))


class CoagTrajectory(NamedTuple):
    states: List[CoagState]
    dt: float
    p_label: str

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])

    def moments(self) -> np.ndarray:
        """Rows ``(t, m1, m2, gel_mass)``."""
        return np.array([(s.t, s.m1, s.m2, s.gel_mass) for s in self.states])

    def to_csv(self, path_or_file) -> None:
        """Long format ``t,k,rho_k``."""
        def write(fh):
            w = csv.writer(fh)
            w.writerow(["t", "k", "rho_k"])
            for s in self.states:
                for k in range(1, s.rho.size):
                    w.writerow([repr(s.t), k, repr(float(s.rho[k]))])
        _with_file(path_or_file, write)

    def summary_to_csv(self, path_or_file) -> None:
        """``t,m1,m2,gel_mass`` per recorded time."""
        def write(fh):
            w = csv.writer(fh)
            w.writerow(["t", "m1", "m2", "gel_mass"])
            for row in self.moments():
                w.writerow([repr(float(x)) for x in row])
        _with_file(path_or_file, write)


def integrate(p: LengthDistribution, t_end: float, kmax: int, dt: float = 1e-3,
              record_every: Optional[float] = None,
              record_times: Optional[Sequence[float]] = None) -> CoagTrajectory:
    """Fixed-step RK4 from the monodisperse state up to ``t_end``.

    States are recorded at ``t = 0``, at multiples of ``record_every`` (or at
    the step times closest to ``record_times``) and at ``t_end``. Mass leaving
    ``1..kmax`` is integrated alongside as ``gel_mass``.
    """
    if not dt > 0:
        raise DistributionError("dt must be > 0")
    if t_end < 0:
        raise DistributionError("t_end must be >= 0")
    kmax = int(kmax)
    w = _weights(p, kmax)
    loss_rate = float(np.dot(np.arange(w.size), w))
    if dt * loss_rate * kmax > RK4_STABILITY:
        raise CoagulationError(
            f"dt={dt:g} is unstable for K_max={kmax}: need dt < {RK4_STABILITY / (loss_rate * kmax):.3g}")
    ks = np.arange(kmax + 1, dtype=float)
    state = CoagState.monodisperse(kmax)
    r = state.rho.copy()
    gel = 0.0
    n_steps = int(math.ceil(t_end / dt - 1e-9))
    record = set()
    if record_every:
        stride = max(1, int(round(record_every / dt)))
        record.update(range(stride, n_steps + 1, stride))
    if record_times is not None:
        record.update(min(n_steps, int(round(t / dt))) for t in record_times)
    record.add(n_steps)
    states = [state]

    def f(x):
        d = _rhs(x, w)
        return d, -float(np.dot(ks, d))

    for step in range(1, n_steps + 1):
        h = min(dt, t_end - (step - 1) * dt)
        k1, g1 = f(r)
        k2, g2 = f(r + 0.5 * h * k1)
        k3, g3 = f(r + 0.5 * h * k2)
        k4, g4 = f(r + h * k3)
        r = r + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        gel += (h / 6.0) * (g1 + 2 * g2 + 2 * g3 + g4)
        low = r.min()
        if low < 0:
            if low < -NEGATIVE_SLACK:
                k_bad = int(r.argmin())
                raise CoagulationError(
                    f"density rho_{k_bad} = {low:.3g} < 0 at t = {step * dt:.6g}; reduce dt")
            log.debug("clamped negative densities (min %.3g) at step %d", low, step)
            np.maximum(r, 0.0, out=r)
        if step in record:
            states.append(CoagState(r.copy(), min(step * dt, t_end), gel))
    return CoagTrajectory(states, dt, p.label or p.kind)


def closed_form_rho_vec(p: LengthDistribution, t: float, kmax: int) -> np.ndarray:
    """``rho_k(t) = P(T(t) = k) / k`` for ``k = 0..kmax`` (entry 0 is 0)."""
    if t < 0:
        raise DistributionError("t must be >= 0")
    out = np.zeros(kmax + 1)
    if t == 0:
        out[1] = 1.0
        return out
    probs = total_progeny_pmf(BGWSpec.limiting(p, t), kmax).probs
    k = np.arange(1, kmax + 1)
    out[1:] = probs[1:] / k
    return out


def closed_form_rho(p: LengthDistribution, t: float, k: int) -> float:
    if k < 1:
        raise DistributionError("k must be >= 1")
    return float(closed_form_rho_vec(p, t, k)[k])


def dirac_rho(j: int, t: float, k) -> np.ndarray:
    """Explicit ``rho_k(t)`` for ``p = delta_j``; zero off ``1 + (j-1) N``.

    ``e^(-s k) (s k)^m / (k^2 m!)`` with ``m = (k-1)/(j-1)`` and ``s = j t``:
    the familiar form in ``s`` counts time in units of ``n/j`` tuple draws.
    """
    t = j * t
    k = np.atleast_1d(np.asarray(k, dtype=np.int64))
    out = np.zeros(k.size)
    ok = (k >= 1) & ((k - 1) % (j - 1) == 0)
    kk = k[ok].astype(float)
    m = (kk - 1) / (j - 1)
    with np.errstate(divide="ignore"):
        logv = -t * kk + m * np.log(t * kk) - 2 * np.log(kk) - gammaln(m + 1)
    logv = np.where(m == 0, -t * kk - 2 * np.log(kk), logv)
    out[ok] = np.exp(logv)
    return out


class GelationDiagnostics(NamedTuple):
    second_moment_time: Optional[float]
    mass_loss_time: Optional[float]
    theory: float
    inconclusive: bool
    note: str


def gelation_diagnostics(traj: CoagTrajectory, p: LengthDistribution,
                         mass_eps: float = 1e-3) -> GelationDiagnostics:
    """Estimated blow-up time of the second moment and onset of mass loss.

    The truncated second moment cannot diverge; its blow-up is located where
    it peaks (mass then starts draining into the gel). Mass loss onset is the
    first time ``m1 < 1 - mass_eps``. Both converge to ``1/m2`` only as
    ``K_max`` grows.
    """
    m2 = factorial_moment(p, 2)
    theory = 1.0 / m2
    rows = traj.moments()
    t, m1, sec = rows[:, 0], rows[:, 1], rows[:, 2]
    note = f"truncated at K_max={traj.states[0].kmax}; estimates biased late for small K_max"
    peak = int(np.argmax(sec))
    second = float(t[peak]) if 0 < peak < t.size - 1 else None
    lost = np.nonzero(m1 < 1.0 - mass_eps)[0]
    mass = float(t[lost[0]]) if lost.size else None
    inconclusive = second is None or mass is None
    if inconclusive:
        note = "trajectory does not extend past the gel point; " + note
    return GelationDiagnostics(second, mass, theory, inconclusive, note)
