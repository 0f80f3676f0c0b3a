"""End-to-end acceptance checks, one test per criterion."""
import filecmp
import json
import time

import numpy as np

from conftest import duffing_chain, fitted_rom
from ssmrom.cli import main
from ssmrom.data import extract_backbone_pff, nmte
from ssmrom.forcing import invariance_residual, manifold_correction, reduce_forcing
from ssmrom.manifold import fit_parametrization, orthogonality_error
from ssmrom.model import ForcingSpec, MechModel, PolyForce, build_oscillator_chain, chain_ratio_tuning
from ssmrom.pipeline import build_dataset, decay_trajectory, fit_rom, heldout_nmte, training_plan
from ssmrom.response import (
    amp_phase,
    backbone,
    continue_frc,
    direct_steady_state,
    evaluate_branch,
    linear_frf,
    prepare_forcing,
    simulate_rom,
)
from ssmrom.simulate import integrate, modal_initial_condition
from ssmrom.spectral import build_chart, compute_spectrum, detect_internal_resonance, dof_selector

F0 = np.array([1.0, 0.0])


def _bundles(rom, model, s, f0, eps, ref=0):
    return lambda Om: prepare_forcing(rom, model, s, ForcingSpec.periodic(f0, Om, eps=eps), pinned=(ref,))


def _frc(rom, model, s, f0, eps, lo, hi, ref=0, observables=None):
    w = rom.chart.frequencies[ref]
    bundle_for = _bundles(rom, model, s, f0, eps, ref)
    b = bundle_for(w)
    br = continue_frc(rom.nf, b.rf.g, (lo * w, hi * w), eps, ref=ref, rf=b.rf, rho_max=rom.z_max)
    return evaluate_branch(br, rom, bundle_for, observables=observables)


def _crossings(br, Om, values):
    """Linearly interpolated branch values wherever the branch passes ``Om``."""
    out = []
    for j in np.flatnonzero(np.diff(np.sign(br.Omega - Om))):
        a = (Om - br.Omega[j]) / (br.Omega[j + 1] - br.Omega[j])
        out.append((values[j] + a * (values[j + 1] - values[j]), br.stability[j]))
    return out


def _steady_amp(traj, t, Om, dof=0):
    return amp_phase(traj.states[1:, dof], t[1:], Om)[0]


def _last_cycle(Om, cycles, n_per=128):
    T = 2 * np.pi / Om
    return np.concatenate([[0.0], (cycles - 1) * T + np.arange(n_per) * (T / n_per)])


def test_orthogonality(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for i in range(100):
        n = int(rng.integers(3, 7))
        m = build_oscillator_chain(n, rng.uniform(0.5, 2.0, n + 1), damping=(0.01, 0.01))
        modes = [0] if i % 2 else [0, 1]
        style = "modal-complex" if i % 4 < 2 else "modal-mechanical"
        chart = build_chart(compute_spectrum(m), modes, style)
        order = 2 + i % 6
        X = rng.normal(size=(800, 2 * n)) * rng.uniform(0.1, 3.0)
        v, _ = fit_parametrization(X @ chart.W0.T, X, chart, order)
        worst = max(worst, orthogonality_error(chart, v))
    dt = time.perf_counter() - t0
    verdict("C1 orthogonality", worst <= 1e-10 and dt < 60, f"max |W0 V_nl| = {worst:.2e}, {dt:.1f} s")


def test_chart_correctness(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    worst = [0.0, 0.0, 0.0]
    for n in (2, 5, 10, 20, 35, 50):
        m = build_oscillator_chain(n, rng.uniform(0.5, 2.0, n + 1), damping=(0.01, 0.005))
        s = compute_spectrum(m)
        modes = [0] if n == 2 else [0, 2]
        for style in ("modal-complex", "modal-mechanical", "non-modal"):
            W0 = dof_selector(n, [0, 1][: len(modes)]) if style == "non-modal" else None
            chart = build_chart(s, modes, style, W0=W0)
            e = chart.residuals(s.A)
            worst[0] = max(worst[0], e[0])
            worst[1] = max(worst[1], e[1])
            if style != "non-modal":
                worst[2] = max(worst[2], e[2])
    dt = time.perf_counter() - t0
    ok = worst[0] <= 1e-10 and worst[1] <= 1e-8 and worst[2] <= 1e-8 and dt < 60
    verdict("C2 chart correctness", ok,
            f"|W0V0-I| {worst[0]:.1e}, |AV0-V0R0|/|A| {worst[1]:.1e}, |W0A-R0W0|/|A| {worst[2]:.1e}, {dt:.1f} s")


def test_linear_system(verdict):
    t0 = time.perf_counter()
    m = build_oscillator_chain(2, [1, 2, 1], damping=(0.02, 0.01))
    s = compute_spectrum(m)
    chart = build_chart(s, [0], "modal-complex")
    tr = decay_trajectory(m, modal_initial_condition(m, [(0, 0.5)]), chart, 20, samples_per_period=800,
                          tol=1e-12)
    rom = fit_rom(build_dataset([tr], chart, 0, n_periods=0), chart, 3)
    coef = max(rom.v.max_coeff(), rom.r.max_coeff(), rom.nf.hinv.max_coeff(),
               max(np.abs(c).max(initial=0) for c in rom.nf.ncoef))
    eps = 0.01
    br = _frc(rom, m, s, F0, eps, 0.099, 10.1)
    frf = np.abs(linear_frf(m, eps * F0, br.Omega)[:, 0])
    err = np.abs(br.amp / frf - 1).max()
    decades = np.log10(br.Omega.max() / br.Omega.min())
    dt = time.perf_counter() - t0
    ok = coef < 1e-8 and err <= 1e-6 and decades >= 2 and dt < 60
    verdict("C3 linear system", ok,
            f"max nonlinear coeff {coef:.1e}, FRC vs FRF {err:.1e} over {decades:.2f} decades, {dt:.1f} s")


def test_duffing_two_dof(verdict, duffing):
    t0 = time.perf_counter()
    m, s, ds, rom = duffing["model"], duffing["spectrum"], duffing["data"], duffing["rom"]
    assert len(ds.split("train")) == 1
    test_err = max(heldout_nmte(rom, ds))
    # backbone against the instantaneous frequency of the training decay
    tr = ds.split("train").trajectories[0]
    t = tr.t_full if len(tr.s) == len(tr.t_full) else tr.t
    pff = extract_backbone_pff(tr.s, t)
    smax = np.abs(tr.s).max()
    sel = (pff.amplitude < 0.98 * smax) & (pff.amplitude > 0.05 * smax)
    bb = backbone(rom, np.linspace(0, rom.z_max, 200))
    bb_err = np.abs(np.interp(pff.amplitude[sel], bb.amp, bb.omega) / pff.frequency[sel] - 1).max()
    w1 = s.lam[0].imag
    frc_err = 0.0
    for eps in (0.01, 0.03):
        br = _frc(rom, m, s, F0, eps, 0.85, 1.15)
        peak = br.Omega[np.argmax(br.amp)]
        for Om in np.linspace(0.92 * w1, 0.995 * peak, 6):
            res, _ = direct_steady_state(m, ForcingSpec.periodic(F0, Om, eps=eps), np.zeros(4), cycles=50)
            full = res["s"][0]
            cands = [a for a, st in _crossings(br, Om, br.amp) if st == 1]
            frc_err = max(frc_err, min(abs(a / full - 1) for a in cands))
    dt = time.perf_counter() - t0
    ok = test_err <= 10 and bb_err <= 0.02 and frc_err <= 0.03 and dt < 600
    verdict("C4 Duffing 2-DOF", ok,
            f"test NMTE {test_err:.3f} %, backbone vs PFF {100 * bb_err:.3f} %, "
            f"FRC vs direct {100 * frc_err:.2f} %, {dt:.0f} s")


def test_bistability(verdict):
    t0 = time.perf_counter()
    m = duffing_chain(damping=(0.004, 0.004))
    s = compute_spectrum(m)
    chart = build_chart(s, [0], "modal-complex")
    plan = training_plan(m, [0], 1.0)
    trajs = [decay_trajectory(m, x0, chart, 210, label=lab) for lab, _, x0 in plan]
    rom = fit_rom(build_dataset(trajs, chart, 0, splits=[sp for _, sp, _ in plan]), chart, 5)
    eps = 0.006
    br = _frc(rom, m, s, F0, eps, 0.9, 1.15)
    ok = len(br.folds) == 2
    detail = f"{len(br.folds)} folds"
    if ok:
        a, b = sorted(br.folds)
        middle = set(br.stability[a + 1 : b].tolist())
        outer = set(br.stability[: a - 1].tolist()) | set(br.stability[b + 2 :].tolist())
        Om = 0.5 * (br.Omega[a] + br.Omega[b])
        stable = sorted(v for v, st in _crossings(br, Om, br.amp) if st == 1)
        bundle = prepare_forcing(rom, m, s, ForcingSpec.periodic(F0, Om, eps=eps), pinned=(0,))
        t = _last_cycle(Om, 300, 64)
        low = _steady_amp(simulate_rom(rom, bundle, t, z0=np.zeros(1, dtype=complex)), t, Om)
        seed = 1.1 * max((w for w, st in _crossings(br, Om, br.W[:, 0]) if st == 1), key=abs)
        high = _steady_amp(simulate_rom(rom, bundle, t, z0=np.array([seed])), t, Om)
        match = (len(stable) == 2 and abs(low / stable[0] - 1) < 0.02 and abs(high / stable[1] - 1) < 0.02)
        ok = middle == {0} and outer == {1} and match and high > 2 * low
        detail = (f"folds at Omega {br.Omega[a]:.4f}, {br.Omega[b]:.4f}; middle stability {middle}; "
                  f"attractors {low:.4f} / {high:.4f} vs stable branches {np.round(stable, 4).tolist()}")
    dt = time.perf_counter() - t0
    verdict("C5 bistability", ok and dt < 300, f"{detail}, {dt:.0f} s")


def test_quasi_periodic_forcing(verdict, duffing):
    t0 = time.perf_counter()
    m, s, rom = duffing["model"], duffing["spectrum"], duffing["rom"]
    w1 = s.lam[0].imag
    rng = np.random.default_rng(1)
    errs = []
    for nfreq, eps in ((2, 0.015), (20, 0.004)):
        if nfreq == 2:
            Oms = np.array([0.93, 1.04]) * w1
        else:
            Oms = np.sort(rng.uniform(0.85 * w1, 1.15 * w1, nfreq))
        ph = rng.uniform(0, 2 * np.pi, nfreq)
        fs = ForcingSpec.multi_frequency(F0, Oms, ph, eps=eps)
        Tslow = 2 * np.pi / Oms.min()
        t = np.arange(0, 100 * Tslow, Tslow / 50)
        full = integrate(m, fs, np.zeros(4), (0, t[-1]), tol=1e-10, t_eval=t)
        pred = simulate_rom(rom, prepare_forcing(rom, m, s, fs), t, x0=np.zeros(4))
        errs.append(nmte(pred, full))
    dt = time.perf_counter() - t0
    verdict("C6 quasi-periodic forcing", max(errs) <= 10 and dt < 600,
            f"NMTE {errs[0]:.3f} % (2 freq), {errs[1]:.3f} % (20 freq), {dt:.0f} s")


def test_internal_resonance(verdict):
    t0 = time.perf_counter()
    m = build_oscillator_chain(2, chain_ratio_tuning(3.0), [1.0, 0, 0], damping=(0.02, 0.0))
    s = compute_spectrum(m)
    res = [r for r in detect_internal_resonance(s) if tuple(r.ratio) == (1, 3)]
    detuning = res[0].detuning if res else np.inf
    chart = build_chart(s, [0, 1], "modal-complex")
    plan = training_plan(m, [0, 1], 1.0, seed=0)
    trajs = [decay_trajectory(m, x0, chart, 60, label=lab) for lab, _, x0 in plan]
    ds = build_dataset(trajs, chart, 0, splits=[sp for _, sp, _ in plan])
    n_train = len(ds.split("train"))
    rom = fit_rom(ds, chart, 5)
    classes = rom.nf.phase_classes(1e-12)
    _, U = m.conservative_modes()
    f0 = m.M @ U[:, 0]
    obs = {f"q{j + 1}": (lambda X, u=m.M @ U[:, j]: X[:, :2] @ u) for j in range(2)}
    eps = 0.01
    br = _frc(rom, m, s, f0, eps, 0.9, 1.1, observables=obs)
    w1 = s.lam[0].imag
    err = [0.0, 0.0]
    for Om in np.linspace(0.97 * w1, 1.03 * w1, 6):
        full, _ = direct_steady_state(m, ForcingSpec.periodic(f0, Om, eps=eps), np.zeros(4), cycles=150,
                                      observables=obs)
        q1 = _crossings(br, Om, br.amp)
        q2 = _crossings(br, Om, br.extra["amp_q2"])
        k = int(np.argmin([abs(a / full["q1"][0] - 1) for a, _ in q1]))
        err[0] = max(err[0], abs(q1[k][0] / full["q1"][0] - 1))
        err[1] = max(err[1], abs(q2[k][0] / full["q2"][0] - 1))
    dt = time.perf_counter() - t0
    ok = (detuning < 0.01 and n_train == 3 and chart.V0.shape[1] == 4 and classes == {(-3, 1), (3, -1)}
          and max(err) <= 0.05 and dt < 1200)
    verdict("C7 1:3 internal resonance", ok,
            f"detuning {detuning:.1e}, {n_train} training trajectories, phase classes {sorted(classes)}, "
            f"q1 {100 * err[0]:.2f} %, q2 {100 * err[1]:.2f} %, {dt:.0f} s")


def test_forcing_invariance(verdict):
    t0 = time.perf_counter()
    springs = [1.0, 1.3, 0.9, 1.1, 1.4, 0.8, 1.2]
    base = build_oscillator_chain(6, springs, damping=(0.02, 0.01))
    rng = np.random.default_rng(3)
    general = MechModel(base.M, np.diag(rng.uniform(0.01, 0.05, 6)), base.K, PolyForce.zero(6))
    f0 = np.linspace(1.0, -0.5, 6)
    inv, agree = 0.0, 0.0
    for m in (base, general):
        s = compute_spectrum(m)
        chart = build_chart(s, [0], "modal-complex")
        for Om in (0.5, 1.05 * s.frequencies[0], 1.7):
            f = ForcingSpec.periodic(f0, Om)
            rf = reduce_forcing(m, chart, f)
            modal = manifold_correction(m, s, chart, f, N=5, method="modal")
            direct = manifold_correction(m, s, chart, f, method="direct")
            inv = max(inv, invariance_residual(m, chart, f, rf.r1, modal) / np.linalg.norm(f0))
            agree = max(agree, np.abs(modal.V1 - direct.V1).max() / np.abs(direct.V1).max())
    dt = time.perf_counter() - t0
    verdict("C8 forcing invariance", inv <= 1e-8 and agree <= 1e-8 and dt < 60,
            f"residual/|f0| {inv:.1e}, modal sum vs direct {agree:.1e}, {dt:.1f} s")


def test_nonmodal_chart(verdict, duffing):
    t0 = time.perf_counter()
    m, s = duffing["model"], duffing["spectrum"]
    _, chart, ds, rom = fitted_rom(m, "non-modal", W0=dof_selector(2, [0]))
    e_modal = float(np.mean(heldout_nmte(duffing["rom"], duffing["data"])))
    e_nonmodal = float(np.mean(heldout_nmte(rom, ds)))
    eps = 0.01
    worst = 0.0
    for Om in np.array([0.94, 0.97, 0.99, 1.0, 1.01, 1.03]) * s.lam[0].imag:
        t = _last_cycle(Om, 60)
        amps = []
        for r in (duffing["rom"], rom):
            b = prepare_forcing(r, m, s, ForcingSpec.periodic(F0, Om, eps=eps), pinned=(0,))
            amps.append(_steady_amp(simulate_rom(r, b, t, x0=np.zeros(4)), t, Om))
        worst = max(worst, abs(amps[1] / amps[0] - 1))
    dt = time.perf_counter() - t0
    ok = abs(e_nonmodal - e_modal) <= 2.0 and worst <= 0.01 and dt < 300
    verdict("C9 non-modal chart", ok,
            f"NMTE {e_nonmodal:.4f} % vs modal {e_modal:.4f} %, forced response within {100 * worst:.2f} %, "
            f"{dt:.0f} s")


def test_determinism(verdict, tmp_path):
    t0 = time.perf_counter()
    cfg = {
        "model": {"n_masses": 2, "springs": [1, 2.6, 1], "cubic": [1, 0, 0], "damping": [0.01, 0.05]},
        "chart": {"modes": [0], "orders": [5]},
        "training": {"amplitude": 1.0, "n_periods": 28},
        "forcing": {"f0": [1, 0], "eps": [0.01, 0.03], "Omega_range": [0.85, 1.15]},
        "seed": 7,
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    codes = []
    for run in ("a", "b"):
        for stage in ("generate", "fit", "predict"):
            codes.append(main([stage, "--config", str(path), "--out", str(tmp_path / run)]))
    csvs = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*.csv"))
    same = [filecmp.cmp(tmp_path / "a" / p, tmp_path / "b" / p, shallow=False) for p in csvs]
    dt = time.perf_counter() - t0
    ok = all(c == 0 for c in codes) and len(csvs) > 3 and all(same)
    verdict("C10 determinism", ok, f"{sum(same)}/{len(csvs)} CSV files bit-identical, {dt:.0f} s")

