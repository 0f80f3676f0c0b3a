import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from ssmrom.errors import ModelError
from ssmrom.model import ForcingSpec, build_oscillator_chain, chain_ratio_tuning
from ssmrom.simulate import (
    integrate,
    integrate_newmark,
    modal_initial_condition,
    nonlinearity_ratio_scan,
    static_solve,
)


def duffing_1dof(gamma=0.5, c=0.02):
    return build_oscillator_chain(1, [1.0], [gamma], damping=(c, 0.0))


def test_single_mass_reduces_to_duffing():
    m = duffing_1dof()
    assert m.M.tolist() == [[1.0]]
    assert m.K.tolist() == [[1.0]]
    assert m.C.tolist() == [[0.02]]
    q = np.array([0.7])
    assert m.internal_force(q)[0] == pytest.approx(0.5 * 0.7**3)


def test_two_mass_linear_frequencies():
    m = build_oscillator_chain(2, [1.0, 1.0, 1.0], [0, 0, 0], damping=(0.0, 0.0))
    w, U = m.conservative_modes()
    # det(K - w^2 I) = (2 - w^2)^2 - 1
    np.testing.assert_allclose(w, [1.0, np.sqrt(3.0)], rtol=1e-12)
    np.testing.assert_allclose(U.T @ m.M @ U, np.eye(2), atol=1e-12)


def test_ratio_tuning_gives_one_to_three():
    k = chain_ratio_tuning(3.0)
    m = build_oscillator_chain(2, k, damping=(0.0, 0.0))
    w, _ = m.conservative_modes()
    assert w[1] / w[0] == pytest.approx(3.0, rel=5e-3)


def test_nonpositive_stiffness_rejected():
    with pytest.raises(ModelError):
        build_oscillator_chain(2, [1.0, -1.0, 1.0])
    with pytest.raises(ModelError):
        build_oscillator_chain(2, [1.0, 0.0, 1.0])


def test_internal_force_purely_nonlinear():
    m = build_oscillator_chain(3, [1, 2, 3, 4], [0.3, -0.2, 0.5, 1.0], damping=(0.01, 0.01))
    assert np.all(m.internal_force(np.zeros(3)) == 0)
    J = m.f_int.jacobian(np.zeros(3))
    assert np.abs(J).max() == 0


def test_forcing_conjugate_closure():
    f = ForcingSpec([((1,), np.array([1 + 2j, 0.5]))], [2.0], eps=0.3)
    assert f.keys == [(-1,), (1,)]
    np.testing.assert_allclose(f.amplitudes[0], np.conj(f.amplitudes[1]))
    t = 0.37
    expected = 0.3 * 2 * np.real(np.array([1 + 2j, 0.5]) * np.exp(2j * t))
    np.testing.assert_allclose(f(t), expected, rtol=1e-14)
    with pytest.raises(ModelError):
        ForcingSpec([((1,), [1.0]), ((-1,), [2.0])], [1.0])


def test_periodic_forcing_is_cosine():
    f = ForcingSpec.periodic([2.0, -1.0], 1.5, eps=0.1)
    for t in np.linspace(0, 5, 7):
        np.testing.assert_allclose(f(t), 0.1 * np.array([2.0, -1.0]) * np.cos(1.5 * t), atol=1e-15)


def test_linear_oscillator_closed_form():
    zeta = 0.05
    m = build_oscillator_chain(1, [1.0], [0.0], damping=(2 * zeta, 0.0))
    t = np.linspace(0, 30, 301)
    tr = integrate(m, None, np.array([1.0, 0.0]), (0, 30), tol=1e-9, t_eval=t)
    wd = np.sqrt(1 - zeta**2)
    exact = np.exp(-zeta * t) * (np.cos(wd * t) + zeta / wd * np.sin(wd * t))
    assert np.abs(tr.states[:, 0] - exact).max() < 1e-6


def test_origin_is_equilibrium():
    m = build_oscillator_chain(2, [1, 1, 1], [1, 0, 0], damping=(0.01, 0.01))
    tr = integrate(m, None, np.zeros(4), (0, 10))
    assert np.all(tr.states == 0)


def test_conservative_energy_drift():
    tol = 1e-9
    m = build_oscillator_chain(2, [1, 1, 1], [1.0, 0.0, 0.5], damping=(0.0, 0.0))
    x0 = np.array([0.5, -0.2, 0.0, 0.3])
    tr = integrate(m, None, x0, (0, 50), tol=tol)
    E = np.array([m.energy(x) for x in tr.states])
    assert np.abs(E - E[0]).max() / E[0] < 10 * tol


def test_time_reversal():
    tol = 1e-10
    m = build_oscillator_chain(2, [1, 1, 1], [1.0, 0.0, 0.0], damping=(0.0, 0.0))
    x0 = np.array([0.4, 0.1, 0.0, -0.2])
    fwd = integrate(m, None, x0, (0, 10), tol=tol)
    xb = fwd.states[-1] * np.array([1, 1, -1, -1])
    back = integrate(m, None, xb, (0, 10), tol=tol)
    xr = back.states[-1] * np.array([1, 1, -1, -1])
    assert np.abs(xr - x0).max() < 100 * tol * 10


def _hb_amplitude(k, c, gamma, F, Om, guess):
    # one-harmonic balance: ((k - Om^2 + 3/4 gamma a^2)^2 + (c Om)^2) a^2 = F^2
    def g(a):
        return ((k - Om**2 + 0.75 * gamma * a**2) ** 2 + (c * Om) ** 2) * a**2 - F**2

    grid = np.linspace(1e-6, 3.0, 30001)
    vals = g(grid)
    roots = [brentq(g, grid[i], grid[i + 1]) for i in np.flatnonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))]
    return min(roots, key=lambda r: abs(r - guess))


def test_forced_duffing_matches_harmonic_balance():
    k, c, gamma, F, Om = 1.0, 0.02, 0.5, 0.02, 0.9
    m = duffing_1dof(gamma, c)
    f = ForcingSpec.periodic([F], Om)
    T = 2 * np.pi / Om
    cycles = 160
    t = (cycles - 1) * T + np.linspace(0, T, 257)[:-1]
    tr = integrate(m, f, np.zeros(2), (0, cycles * T), tol=1e-10, t_eval=t)
    amp = np.abs(tr.states[:, 0]).max()
    assert amp == pytest.approx(_hb_amplitude(k, c, gamma, F, Om, amp), rel=0.01)


def test_static_duffing_root():
    m = duffing_1dof()
    q = static_solve(m, np.array([1.5]))
    assert q[0] == pytest.approx(1.0, abs=1e-10)
    assert np.all(static_solve(m, np.zeros(1)) == 0)


def test_static_linear_solution():
    m = build_oscillator_chain(3, [1, 2, 3, 4], damping=(0.01, 0.01))
    load = np.array([0.3, -1.0, 2.0])
    np.testing.assert_allclose(static_solve(m, load), np.linalg.solve(m.K, load), rtol=1e-12)


def test_static_deflection_is_fixed_point():
    m = build_oscillator_chain(2, [1, 1, 1], [1.0, 0.0, 0.0], damping=(0.05, 0.0))
    load = np.array([0.8, 0.2])
    q = static_solve(m, load)
    f = ForcingSpec([((0,), load)], [1.0])
    tr = integrate(m, f, np.concatenate([q, np.zeros(2)]), (0, 5), tol=1e-10)
    assert np.abs(tr.states - tr.states[0]).max() < 5e-9


def test_modal_initial_condition():
    m = build_oscillator_chain(2, [1, 1, 1], damping=(0.0, 0.0))
    _, U = m.conservative_modes()
    x0 = modal_initial_condition(m, [(1, 0.3)])
    np.testing.assert_allclose(x0[:2], 0.3 * U[:, 1])
    assert np.all(x0[2:] == 0)
    assert np.all(modal_initial_condition(m, [(0, 0.0)]) == 0)


def test_nonlinearity_ratio():
    np.testing.assert_allclose(nonlinearity_ratio_scan(duffing_1dof(), 0, [1.0]), [1 / 3], rtol=1e-12)
    lin = build_oscillator_chain(2, [1, 1, 1], damping=(0.0, 0.0))
    assert np.all(nonlinearity_ratio_scan(lin, 0, [0.5, 1.0]) == 0)
    r = nonlinearity_ratio_scan(duffing_1dof(), 0, [1e-3, 2e-3])
    assert r[1] / r[0] == pytest.approx(4.0, rel=1e-3)


def test_newmark_matches_runge_kutta_on_linear_chain():
    m = build_oscillator_chain(3, [1, 1, 1, 1], damping=(0.02, 0.01))
    x0 = np.array([0.2, 0.0, -0.1, 0, 0, 0])
    t = np.linspace(0, 20, 4001)
    rk = integrate(m, None, x0, (0, 20), tol=1e-10, t_eval=t)
    nm = integrate_newmark(m, None, x0, (0, 20), dt=t[1] - t[0])
    assert np.abs(nm.states[:, :3] - rk.states[:, :3]).max() < 1e-4


@settings(max_examples=15, deadline=None)
@given(a=st.floats(0.05, 1.0), b=st.floats(0.05, 1.0))
def test_linear_decay_energy_monotone(a, b):
    m = build_oscillator_chain(2, [1, 1, 1], damping=(0.05, 0.01))
    tr = integrate(m, None, np.array([a, -b, 0, 0]), (0, 20), tol=1e-9)
    E = np.array([m.energy(x) for x in tr.states])
    assert np.all(np.diff(E) <= 1e-9 * E[0])
