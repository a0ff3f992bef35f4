import io
import itertools
import math

import numpy as np
import pytest

from coalkit.coag import (CoagState, CoagulationError, closed_form_rho, closed_form_rho_vec,
                          dirac_rho, gelation_diagnostics, integrate, kernel_all, kernel_Kj, rhs)
from coalkit.dist import LengthDistribution, factorial_moment, m_star

DELTA2 = LengthDistribution.dirac(2)
DELTA3 = LengthDistribution.dirac(3)


def random_state(rng, kmax=12):
    rho = np.zeros(kmax + 1)
    rho[1:] = rng.random(kmax) * rng.choice([1e-3, 1.0, 10.0], size=kmax)
    return rho


def brute_kernel(rho, k, j):
    gain = 0.0
    for parts in itertools.product(range(1, k + 1), repeat=j):
        if sum(parts) == k:
            gain += math.prod(i * rho[i] for i in parts)
    return gain, j * k * rho[k]


def flory_rhs(v, x):
    """Flory's equation with multiplicative kernel, started from mass 1 on size 1."""
    kmax = v.size - 1
    y = np.arange(1, kmax + 1)
    gain = 0.5 * sum(i * (x - i) * v[i] * v[x - i] for i in range(1, x))
    v0 = np.zeros(kmax + 1)
    v0[1] = 1.0
    loss = x * v[x] * np.sum(y * v[y]) + x * v[x] * np.sum(y * (v0[y] - v[y]))
    return gain - loss


# -- kernel --------------------------------------------------------------------


def test_kernel_examples():
    mono = CoagState.monodisperse(10)
    assert kernel_Kj(mono, 2, 2) == 1.0
    assert kernel_Kj(mono, 1, 2) == -2.0
    rng = np.random.default_rng(0)
    rho = random_state(rng)
    for j in (2, 3, 4):
        for k in range(1, j):
            assert kernel_Kj(rho, k, j) == -j * k * rho[k]


def test_kernel_matches_composition_enumeration():
    rng = np.random.default_rng(1)
    for _ in range(100):
        rho = random_state(rng)
        for j in (2, 3, 4):
            for k in range(1, 13):
                gain, loss = brute_kernel(rho, k, j)
                got = kernel_Kj(rho, k, j)
                assert abs(got - (gain - loss)) <= 1e-12 * max(gain + loss, 1e-300)


def test_kernel_fft_path_agrees_with_direct():
    # FFT rounding is absolute, of order eps * (sum_i i rho_i)^j; use a unit-mass state
    big = closed_form_rho_vec(DELTA2, 0.3, 800)
    small = big[:401]
    for j in (2, 3, 4):
        assert np.max(np.abs(kernel_all(big, j)[:401] - kernel_all(small, j))) < 1e-13


# -- right-hand side -----------------------------------------------------------


def test_rhs_is_flory_for_pairs():
    rng = np.random.default_rng(3)
    v = random_state(rng, 20) * 0.05
    ours = rhs(v, DELTA2)
    for x in range(1, 21):
        # pairs run Flory's clock at twice the speed
        assert ours[x] == pytest.approx(2 * flory_rhs(v, x), rel=1e-12, abs=1e-15)


def test_rhs_singletons_at_start():
    for p in (DELTA2, DELTA3, LengthDistribution.logarithmic(0.5)):
        d = rhs(CoagState.monodisperse(50), p)
        assert d[1] == pytest.approx(-m_star(p), rel=1e-12)


def test_rhs_mixture_is_weighted_sum():
    p = LengthDistribution.from_table({2: 0.3, 3: 0.5, 4: 0.2})
    rng = np.random.default_rng(4)
    rho = random_state(rng, 30)
    expected = 0.3 * kernel_all(rho, 2) + 0.5 * kernel_all(rho, 3) + 0.2 * kernel_all(rho, 4)
    assert np.allclose(rhs(rho, p), expected, rtol=1e-12, atol=1e-14)


def test_rhs_conserves_mass_before_gelation():
    rho = closed_form_rho_vec(DELTA2, 0.2, 400)
    d = rhs(rho, DELTA2)
    assert abs(np.dot(np.arange(401), d)) < 1e-10


# -- closed form ---------------------------------------------------------------


def test_closed_form_examples():
    for p in (DELTA2, DELTA3, LengthDistribution.logarithmic(0.5)):
        for t in (0.1, 0.3):
            assert closed_form_rho(p, t, 1) == pytest.approx(math.exp(-t * m_star(p)), rel=1e-13)
    assert closed_form_rho_vec(DELTA2, 0.0, 5).tolist() == [0, 1, 0, 0, 0, 0]


@pytest.mark.parametrize("j", [2, 3])
def test_dirac_formula(j):
    k = np.arange(1, 31)
    for t in (0.05, 0.1, 0.3):
        ref = closed_form_rho_vec(LengthDistribution.dirac(j), t, 30)[1:]
        assert np.max(np.abs(dirac_rho(j, t, k) - ref)) < 1e-10
    off = [kk for kk in range(1, 31) if (kk - 1) % (j - 1)]
    assert np.all(dirac_rho(j, 0.2, off) == 0)


def test_closed_form_second_moment():
    rho = closed_form_rho_vec(DELTA2, 0.3, 5000)
    k = np.arange(5001, dtype=float)
    assert abs(np.dot(k * k, rho) - 1 / (1 - 0.6)) < 1e-4


@pytest.mark.parametrize("p", [DELTA2, DELTA3], ids=["pairs", "triples"])
def test_closed_form_solves_equation(p):
    h = 1e-5
    for t in (0.1, 0.25, 0.4):
        lo = closed_form_rho_vec(p, t - h, 200)
        hi = closed_form_rho_vec(p, t + h, 200)
        mid = closed_form_rho_vec(p, t, 200)
        fd = (hi - lo) / (2 * h)
        assert np.max(np.abs(fd[1:51] - rhs(mid, p)[1:51])) < 1e-5


# -- integration ---------------------------------------------------------------


def test_integrate_zero_time():
    traj = integrate(DELTA2, 0.0, 20)
    assert len(traj.states) == 1 and traj.states[0].t == 0.0
    assert np.array_equal(traj.states[-1].rho, CoagState.monodisperse(20).rho)


def test_integrate_matches_closed_form():
    traj = integrate(DELTA2, 0.4, 300, dt=1e-3)
    final = traj.states[-1]
    assert final.t == pytest.approx(0.4)
    ref = closed_form_rho_vec(DELTA2, 0.4, 300)
    assert np.max(np.abs(final.rho - ref)) < 1e-6


def test_integrate_mass_before_gelation():
    t_end = 0.9 / factorial_moment(DELTA2, 2)
    traj = integrate(DELTA2, t_end, 3000, dt=4e-4, record_every=0.05)
    for state in traj.states:
        assert abs(state.m1 - 1.0) < 1e-6
        assert abs(state.m1 + state.gel_mass - 1.0) < 1e-12


def test_integrate_stays_nonnegative():
    for p in (DELTA2, DELTA3, LengthDistribution.logarithmic(0.5)):
        traj = integrate(p, 1.0, 200, dt=1e-3, record_every=0.1)
        for state in traj.states:
            assert state.rho.min() >= 0
            assert abs(state.m1 + state.gel_mass - 1.0) < 1e-10


def test_integrate_rejects_unstable_step():
    with pytest.raises(CoagulationError, match="unstable"):
        integrate(DELTA2, 0.5, 2000, dt=1e-2)


def test_trajectory_csv():
    traj = integrate(DELTA2, 0.02, 4, dt=0.01, record_every=0.01)
    fh = io.StringIO()
    traj.to_csv(fh)
    lines = fh.getvalue().splitlines()
    assert lines[0] == "t,k,rho_k" and len(lines) == 1 + 3 * 4
    fh = io.StringIO()
    traj.summary_to_csv(fh)
    assert fh.getvalue().splitlines()[0] == "t,m1,m2,gel_mass"


# -- gelation ------------------------------------------------------------------


@pytest.fixture(scope="module")
def gel_runs():
    out = {}
    for kmax in (500, 1000, 2000):
        dt = min(1e-3, 1 / (2 * kmax))
        out[kmax] = gelation_diagnostics(integrate(DELTA2, 0.7, kmax, dt, record_every=dt), DELTA2)
    return out


def test_gelation_near_theory(gel_runs):
    diag = gel_runs[2000]
    assert diag.theory == 0.5
    assert not diag.inconclusive
    assert abs(diag.second_moment_time - 0.5) < 0.05
    assert abs(diag.mass_loss_time - 0.5) < 0.05


def test_gelation_refines_with_kmax(gel_runs):
    errs = [abs(gel_runs[k].second_moment_time - 0.5) for k in (500, 1000, 2000)]
    assert errs[0] > errs[1] > errs[2]


def test_gelation_inconclusive_when_subcritical():
    diag = gelation_diagnostics(integrate(DELTA2, 0.3, 200, record_every=0.01), DELTA2)
    assert diag.inconclusive
