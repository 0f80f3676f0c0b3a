import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssmrom.data import (
    differentiate,
    extract_backbone_pff,
    fd_derivative,
    load_dataset,
    nmte,
    one_step_error,
    project,
    save_dataset,
    truncate_transient,
)
from ssmrom.manifold import fit_parametrization
from ssmrom.model import build_oscillator_chain
from ssmrom.pipeline import build_dataset, decay_trajectory
from ssmrom.simulate import integrate, modal_initial_condition
from ssmrom.spectral import build_chart, compute_spectrum


@pytest.fixture(scope="module")
def linear_chain():
    m = build_oscillator_chain(3, [1, 1.5, 1.2, 1], damping=(0.02, 0.02))
    s = compute_spectrum(m)
    return m, s, build_chart(s, [0], "modal-complex")


def test_truncate_identity_and_empty(linear_chain):
    m, _, chart = linear_chain
    tr = decay_trajectory(m, modal_initial_condition(m, [(0, 0.1)]), chart, 3)
    assert truncate_transient(tr, chart, 0) is tr
    with pytest.raises(ValueError):
        truncate_transient(tr, chart, 5)
    with pytest.raises(ValueError):
        truncate_transient(tr, chart, -1)
    cut = truncate_transient(tr, chart, 1)
    T = 2 * np.pi / chart.frequencies[0]
    assert cut.times[0] >= T - 1e-12
    np.testing.assert_array_equal(cut.states, tr.states[len(tr) - len(cut):])


def test_truncation_of_on_subspace_data_keeps_linear_fit(linear_chain):
    m, _, chart = linear_chain
    tr = decay_trajectory(m, modal_initial_condition(m, [(0, 0.3)]), chart, 30, tol=1e-12)
    fits = []
    for n in (0, 5):
        Y, Yd = build_dataset([tr], chart, 0, n_periods=n).stacked()
        R, *_ = np.linalg.lstsq(Y, Yd, rcond=None)
        fits.append(R.T)
    assert np.abs(fits[0] - fits[1]).max() < 1e-8


def test_truncation_removes_off_subspace_content(linear_chain):
    m, s, chart = linear_chain
    x0 = modal_initial_condition(m, [(0, 0.3), (1, 0.3), (2, 0.3)])
    # wait until the second pair has decayed by 1e-6
    n_per = np.log(1e-6) / s.lam[1].real * chart.frequencies[0] / (2 * np.pi)
    tr = decay_trajectory(m, x0, chart, n_per + 5, tol=1e-12)
    cut = truncate_transient(tr, chart, n_per)
    X = cut.states
    off = X - (X @ chart.W0.T @ chart.V0.T).real
    assert np.linalg.norm(off, axis=1).max() < 1e-5 * np.linalg.norm(x0)


def test_project_on_subspace_reconstructs(linear_chain):
    m, _, chart = linear_chain
    tr = decay_trajectory(m, modal_initial_condition(m, [(0, 0.3)]), chart, 5, tol=1e-12)
    rt = project(tr, chart, 0)
    assert np.abs(rt.y @ chart.V0.T - tr.states).max() < 1e-10
    zero = integrate(m, None, np.zeros(6), (0, 1))
    assert np.all(project(zero, chart).y == 0)
    np.testing.assert_array_equal(rt.s, tr.states[:, 0])


def test_dual_rate_geometry_fit_matches_full_rate():
    m = build_oscillator_chain(2, [1, 2.6, 1], [1, 0, 0], damping=(0.01, 0.05))
    s = compute_spectrum(m)
    chart = build_chart(s, [0], "modal-complex")
    x0 = modal_initial_condition(m, [(0, 0.8)])
    dense = build_dataset([decay_trajectory(m, x0, chart, 40)], chart, 0)
    Yd, Xd = dense.stacked(full_grid=True)
    rel = []
    for stride in (1, 20):
        ds = build_dataset([decay_trajectory(m, x0, chart, 40, stride=stride)], chart, 0)
        tr = ds.trajectories[0]
        assert len(tr.y) == len(tr.t) and len(tr.x) == len(tr.t_full)
        v, _ = fit_parametrization(*ds.stacked(full_grid=True), chart, 3)
        rel.append(np.linalg.norm(v(Yd) - Xd) / np.linalg.norm(Xd))
    # relative residual in percent, compared in percentage points
    assert abs(100 * rel[1] - 100 * rel[0]) <= 1.0


def test_derivative_of_exponential():
    lam = -0.1 + 1.0j
    dt = 0.01 / abs(lam)
    t = np.arange(2000) * dt
    y = np.exp(lam * t)[:, None] * np.array([1.0, 2.0])
    d = fd_derivative(t, y)
    assert np.abs(d - lam * y).max() / np.abs(lam * y).max() < 1e-8
    assert np.all(fd_derivative(t, np.ones((2000, 2))) == 0)


def test_derivative_of_harmonic():
    w = 1.7
    dt = 2 * np.pi / w / 100
    t = np.arange(1000) * dt
    d = fd_derivative(t, np.cos(w * t))
    assert np.abs(d + w * np.sin(w * t)).max() / w < 1e-6


def test_derivative_fourth_order_convergence():
    errs = []
    for dt in (0.04, 0.02):
        t = np.arange(0, 10, dt)
        errs.append(np.abs(fd_derivative(t, np.sin(t)) - np.cos(t)).max())
    assert 8 <= errs[0] / errs[1] <= 32


def test_derivative_rejects_bad_grids():
    with pytest.raises(ValueError):
        fd_derivative(np.array([0, 1, 2.5, 3, 4, 5.0]), np.zeros(6))
    with pytest.raises(ValueError):
        fd_derivative(np.arange(4.0), np.zeros(4))


def test_nmte_examples():
    rng = np.random.default_rng(0)
    t = np.linspace(0, 1, 50)
    x = rng.normal(size=(50, 3))
    assert nmte((t, x), (t, x)) == 0.0
    i = np.argmax(np.linalg.norm(x, axis=1))
    xbar = x[i]
    delta = 0.01
    off = x + delta * xbar / np.linalg.norm(xbar)
    assert nmte((t, off), (t, x)) == pytest.approx(100 * delta / np.linalg.norm(xbar), rel=1e-12)
    with pytest.raises(ValueError):
        nmte((t, x), (t, x), normalization=np.zeros(3))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), shift=st.floats(-100, 100), k=st.floats(0.1, 10))
def test_nmte_shift_invariant_and_linear(seed, shift, k):
    rng = np.random.default_rng(seed)
    t = np.linspace(0, 2, 30)
    x = rng.normal(size=(30, 2))
    e = rng.normal(size=(30, 2))
    base = nmte((t, x + e), (t, x))
    assert nmte((t + shift, x + e), (t + shift, x)) == pytest.approx(base, rel=1e-12)
    assert nmte((t, x + k * e), (t, x)) == pytest.approx(k * base, rel=1e-10)


def test_nmte_interpolates_predicted():
    tp = np.linspace(0, 10, 2001)
    tr = np.linspace(0, 10, 37)
    err = nmte((tp, np.sin(tp)[:, None]), (tr, np.sin(tr)[:, None]))
    assert err < 1e-8


def test_one_step_error_linear_and_zero(linear_chain):
    m, _, chart = linear_chain
    tr = decay_trajectory(m, modal_initial_condition(m, [(0, 0.3)]), chart, 10, tol=1e-12)
    rt = project(tr, chart)
    e = one_step_error(rt, lambda Y: Y @ chart.R0.T)
    assert e.max() < 1e-9
    zero = project(integrate(m, None, np.zeros(6), (0, 1)), chart)
    assert np.all(one_step_error(zero, lambda Y: Y @ chart.R0.T) == 0)


def test_fitted_field_beats_linear_one_step(duffing):
    rom = duffing["rom"]
    tr = duffing["data"].split("train").trajectories[0]
    lin = one_step_error(tr, lambda Y: Y @ rom.chart.R0.T)
    fit = one_step_error(tr, rom.reduced_field)
    assert np.median(fit) * 10 < np.median(lin)


def test_pff_damped_cosine():
    zeta, w = 0.01, 2.0
    wd = w * np.sqrt(1 - zeta**2)
    t = np.linspace(0, 100, 20001)
    res = extract_backbone_pff(np.exp(-zeta * w * t) * np.cos(wd * t), t)
    assert np.abs(res.frequency / wd - 1).max() < 1e-3
    assert np.abs(res.damping / (zeta * w) - 1).max() < 0.02
    res = extract_backbone_pff(np.cos(wd * t), t)
    assert np.abs(res.damping).max() < 1e-6
    with pytest.raises(ValueError):
        extract_backbone_pff(np.cos(0.05 * t), t)


def test_pff_duffing_hardening():
    m = build_oscillator_chain(1, [1.0], [0.5], damping=(0.02, 0.0))
    tr = integrate(m, None, np.array([1.0, 0.0]), (0, 150), tol=1e-10, dt=0.02)
    res = extract_backbone_pff(tr.states[:, 0], tr.times)
    order = np.argsort(res.amplitude)
    assert np.all(np.diff(res.frequency[order]) > -1e-4)
    assert res.frequency[order[-1]] > res.frequency[order[0]] * 1.05


def test_dataset_roundtrip(tmp_path, duffing):
    ds = duffing["data"]
    save_dataset(ds, tmp_path / "ds")
    back = load_dataset(tmp_path / "ds")
    assert len(back) == len(ds)
    for a, b in zip(ds.trajectories, back.trajectories):
        np.testing.assert_array_equal(a.t, b.t)
        np.testing.assert_array_equal(a.y, b.y)
        np.testing.assert_array_equal(a.x, b.x)
        assert a.split == b.split


def test_differentiate_attaches_derivatives(linear_chain):
    m, _, chart = linear_chain
    tr = decay_trajectory(m, modal_initial_condition(m, [(0, 0.3)]), chart, 10, tol=1e-12)
    rt = differentiate(project(tr, chart))
    assert rt.ydot.shape == rt.y.shape
    with pytest.raises(ValueError):
        differentiate(rt, scheme="spline")
