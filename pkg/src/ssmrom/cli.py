"""Command line entry point: ``ssmrom {eig,generate,fit,predict,validate}``."""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .config import PipelineConfig, load_config
from .data import nmte
from .errors import ConfigError, SSMError
from .io import read_json, read_trajectory, save_model, write_json, write_trajectory
from .pipeline import build_dataset, decay_trajectory, fit_rom, heldout_nmte, training_plan
from .response import (
    amp_phase,
    backbone,
    continue_frc,
    evaluate_branch,
    prepare_forcing,
    reconstruct_nf,
    simulate_rom,
)
from .rom import SSMRom
from .simulate import integrate
from .spectral import STYLES, build_chart, compute_spectrum, detect_internal_resonance, dof_selector, spectral_gap

log = logging.getLogger("ssmrom")

__all__ = ["main", "cmd_eig", "cmd_generate", "cmd_fit", "cmd_predict", "cmd_validate", "write_table"]


def write_table(path, cols: dict):
    """CSV with one column per key; floats written with ``repr`` so reruns are byte-identical."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    keys = list(cols)
    arrs = [np.asarray(cols[k]).ravel() for k in keys]
    n = max((len(a) for a in arrs), default=0)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys)
        for i in range(n):
            w.writerow([_cell(a, i) for a in arrs])


def _cell(a, i):
    if i >= len(a):
        return ""
    if a.dtype.kind in "iub":
        return str(int(a[i]))
    return repr(float(a[i]))


def _model(cfg: PipelineConfig):
    return cfg.model.build(Path(cfg.base_dir))


def _chart(cfg: PipelineConfig, spectrum, model):
    W0 = None
    if cfg.chart.style == "non-modal":
        dofs = cfg.chart.dofs if cfg.chart.dofs is not None else [model.obs_dof]
        W0 = dof_selector(model.n, dofs)
    return build_chart(spectrum, cfg.chart.modes, cfg.chart.style, W0=W0)


def _require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise ConfigError(f"{path} not found; run '{stage}' first")
    return path


def cmd_eig(cfg: PipelineConfig):
    model = _model(cfg)
    s = compute_spectrum(model)
    out = cfg.out_dir
    cfg.snapshot("eig")
    n = len(s.lam)
    lam = s.lam
    wn = np.abs(lam)
    write_table(out / "spectrum.csv", {
        "mode": np.arange(n), "re": lam.real, "im": lam.imag,
        "omega_rad_s": lam.imag, "freq_Hz": lam.imag / (2 * np.pi), "damping_ratio": -lam.real / wn,
    })
    gaps = [spectral_gap(s, m) for m in range(1, s.count)]
    res = detect_internal_resonance(s)
    report = {
        "n_dof": model.n,
        "proportional": bool(s.proportional),
        "spectral_gaps": gaps,
        "resonances": [{"modes": list(r.modes), "ratio": list(r.ratio), "detuning": r.detuning} for r in res],
    }
    write_json(out / "spectrum.json", report)
    return report


def cmd_generate(cfg: PipelineConfig):
    model = _model(cfg)
    s = compute_spectrum(model)
    chart = _chart(cfg, s, model)
    t = cfg.training
    plan = training_plan(model, cfg.chart.modes, t.amplitude, strategy=t.strategy, seed=cfg.seed,
                         load=t.load, test_scale=t.test_scale)
    out = cfg.out_dir
    cfg.snapshot("generate")
    save_model(model, out / "model")
    entries = []
    for label, split, x0 in plan:
        tr = decay_trajectory(model, x0, chart, t.n_periods, t.samples_per_period, t.stride, t.tol, label=label)
        fname = f"{label}.csv"
        write_trajectory(out / "data" / fname, tr)
        entries.append({"label": label, "split": split, "file": fname, "x0": x0})
    write_json(out / "data" / "plan.json", {"seed": cfg.seed, "strategy": t.strategy, "trajectories": entries})
    return entries


def _load_data(cfg: PipelineConfig, chart, model):
    out = cfg.out_dir
    plan = read_json(_require(out / "data" / "plan.json", "generate"))
    trajs, splits = [], []
    for e in plan["trajectories"]:
        trajs.append(read_trajectory(_require(out / "data" / e["file"], "generate")))
        splits.append(e["split"])
    return build_dataset(trajs, chart, model.obs_dof, cfg.training.truncate_periods, splits), plan


def cmd_fit(cfg: PipelineConfig):
    model = _model(cfg)
    s = compute_spectrum(model)
    chart = _chart(cfg, s, model)
    ds, plan = _load_data(cfg, chart, model)
    orders = [cfg.chart.order] if cfg.chart.order is not None else sorted(cfg.chart.orders)
    cfg.snapshot("fit")
    rows = {"order": [], "nmte_mean": [], "nmte_max": []}
    best = None
    for order in orders:
        rom = fit_rom(ds, chart, order, nf_order=cfg.chart.nf_order, obs_dof=model.obs_dof)
        errs = heldout_nmte(rom, ds, route="nf")
        e = float(np.mean(errs))
        rows["order"].append(order)
        rows["nmte_mean"].append(e)
        rows["nmte_max"].append(float(np.max(errs)))
        log.info("order %d: test NMTE %.4g %%", order, e)
        if best is None or e < best[1]:
            best = (rom, e, order)
        # lowest order that meets the target wins
        if e <= cfg.chart.nmte_target:
            best = (rom, e, order)
            break
    rom, e, order = best
    out = cfg.out_dir
    rom.save(out / "rom.json")
    write_table(out / "fit_sweep.csv", rows)
    report = dict(rom.report)
    report.update({"order": order, "heldout_nmte": e, "style": chart.style, "modes": list(chart.mode_indices),
                   "phase_classes": sorted(rom.nf.phase_classes(1e-12)) if rom.nf is not None else []})
    write_json(out / "fit_report.json", report)
    return rom, report


def _forced_ref(cfg: PipelineConfig, rom: SSMRom):
    modes = list(rom.chart.mode_indices)
    j = cfg.forcing.mode
    return modes.index(j) if j is not None and j in modes else 0


def _observables(model, rom: SSMRom):
    obs = {"s": model.observable}
    if rom.m > 1:
        _, U = model.conservative_modes()
        n = model.n
        for j in rom.chart.mode_indices:
            u = model.M @ U[:, j]
            obs[f"q{j + 1}"] = lambda X, u=u: X[:, :n] @ u
    return obs


def _frc(cfg: PipelineConfig, model, s, rom: SSMRom, eps):
    ref = _forced_ref(cfg, rom)
    wr = float(rom.chart.frequencies[ref])
    lo, hi = cfg.forcing.Omega_range or (0.85, 1.15)
    fc = cfg.forcing

    def bundle_for(Om):
        return prepare_forcing(rom, model, s, fc.spec(model, Om, eps), pinned=(ref,))

    b = bundle_for(wr)
    br = continue_frc(rom.nf, b.rf.g, (lo * wr, hi * wr), eps, ref=ref, rf=b.rf, rho_max=rom.z_max)
    evaluate_branch(br, rom, bundle_for, observables=_observables(model, rom))
    return br, bundle_for


def cmd_predict(cfg: PipelineConfig):
    out = cfg.out_dir
    rom = SSMRom.load(_require(out / "rom.json", "fit"))
    if rom.nf is None:
        raise ConfigError("the stored model has no normal form")
    model = _model(cfg)
    s = compute_spectrum(model)
    cfg.snapshot("predict")
    written = []
    for i, eps in enumerate(cfg.forcing.eps):
        br, _ = _frc(cfg, model, s, rom, eps)
        cols = br.table()
        cols["eps"] = np.full(len(br), eps)
        write_table(out / f"frc_{i}.csv", cols)
        written.append(f"frc_{i}.csv")
        write_json(out / f"frc_{i}.json", {"eps": eps, "folds": br.folds, "truncated": br.truncated,
                                          "Omega_folds": [float(br.Omega[k]) for k in br.folds]})
    if rom.m == 1:
        bb = backbone(rom, np.linspace(0.0, rom.z_max, 101))
        write_table(out / "backbone.csv", bb.table())
        written.append("backbone.csv")
    # ROM predictions of the stored test trajectories
    plan_path = out / "data" / "plan.json"
    if plan_path.exists():
        ds, _ = _load_data(cfg, rom.chart, model)
        for tr in ds.split("test").trajectories:
            pred = simulate_rom(rom, None, tr.t_full, x0=tr.x[0], route="nf")
            cols = {"t": tr.t_full, "s_rom": model.observable(pred.states), "s_full": model.observable(tr.x)}
            write_table(out / f"pred_{tr.label}.csv", cols)
            written.append(f"pred_{tr.label}.csv")
    return written


def _validation_points(br, k):
    stable = np.flatnonzero(br.stability == 1)
    if len(stable) == 0:
        return []
    picks = np.linspace(0, len(stable) - 1, k).round().astype(int)
    return sorted(set(int(stable[p]) for p in picks))


def cmd_validate(cfg: PipelineConfig):
    """Seed the full model on ROM periodic orbits and integrate ``cycles`` periods."""
    out = cfg.out_dir
    rom = SSMRom.load(_require(out / "rom.json", "fit"))
    model = _model(cfg)
    s = compute_spectrum(model)
    cfg.snapshot("validate")
    obs = model.observable
    rows = {"eps": [], "Omega": [], "amp_rom": [], "amp_full": [], "rel_err": [], "nmte": []}
    n_per = 128
    for eps in cfg.forcing.eps:
        br, bundle_for = _frc(cfg, model, s, rom, eps)
        for i in _validation_points(br, cfg.forcing.n_validate):
            Om = float(br.Omega[i])
            T = 2 * np.pi / Om * br.period_factor
            t = np.arange(n_per) * (T / n_per)
            Z = br.W[i][None, :] * np.exp(1j * np.outer(t, br.eta) * Om)
            bundle = bundle_for(Om)
            X_rom, _ = reconstruct_nf(rom, Z, t, bundle)
            cyc = cfg.forcing.cycles
            t_last = (cyc - 1) * T + t
            tr = integrate(model, bundle.forcing, X_rom[0], (0.0, cyc * T), tol=1e-10,
                           t_eval=np.concatenate([[0.0], t_last]))
            X_full = tr.states[1:]
            a_full = amp_phase(obs(X_full), t_last, Om)[0]
            rows["eps"].append(eps)
            rows["Omega"].append(Om)
            rows["amp_rom"].append(br.amp[i])
            rows["amp_full"].append(a_full)
            rows["rel_err"].append(br.amp[i] / a_full - 1.0)
            rows["nmte"].append(nmte((t_last, X_rom), (t_last, X_full)))
    write_table(out / "validation.csv", rows)
    return rows


COMMANDS = {"eig": cmd_eig, "generate": cmd_generate, "fit": cmd_fit, "predict": cmd_predict,
            "validate": cmd_validate}


def build_parser():
    p = argparse.ArgumentParser(prog="ssmrom", description="Data-driven SSM reduced-order models.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="JSON configuration file")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--order", type=int, help="polynomial order (skips the order sweep)")
    p.add_argument("--style", choices=STYLES, help="chart style")
    p.add_argument("--seed", type=int, help="seed for random initial-condition weights")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config).override(args.out, args.order, args.style, args.seed)
        COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (SSMError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
