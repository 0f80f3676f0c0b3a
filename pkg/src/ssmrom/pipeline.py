"""Glue for the learn-from-decay workflow: generate, project, fit."""
from __future__ import annotations

import logging

import numpy as np

from .data import (
    ReducedDataset,
    differentiate,
    nmte,
    project,
    real_channels,
    truncate_transient,
)
from .manifold import fit_parametrization, fit_reduced_dynamics
from .model import MechModel
from .normal_form import fit_normal_form
from .rom import SSMRom
from .simulate import integrate, modal_initial_condition, static_solve
from .spectral import ChartBasis

log = logging.getLogger(__name__)

__all__ = ["decay_trajectory", "training_plan", "build_dataset", "fit_rom", "heldout_nmte"]


def decay_trajectory(model: MechModel, x0, chart: ChartBasis, n_periods: float, samples_per_period: int = 100,
                     stride: int = 1, tol: float = 1e-10, label: str = ""):
    """Unforced decay sampled ``samples_per_period`` times per slowest chart period."""
    w = float(np.min(chart.frequencies))
    T = 2 * np.pi / w
    dt = T / samples_per_period
    dense_map = None
    if stride > 1:
        dense_map = np.vstack([real_channels(chart.W0), np.eye(2 * model.n)[model.obs_dof]])
    return integrate(model, None, x0, (0.0, n_periods * T), tol=tol, dt=dt, stride=stride,
                     dense_map=dense_map, label=label)


def training_plan(model: MechModel, modes, amplitude, strategy: int = 2, seed: int = 0, load=None,
                  test_scale: float = 0.95):
    """Initial conditions ``[(label, split, x0), ...]``.

    One mode: a single training IC plus a test IC scaled by ``test_scale``.
    Two modes: one IC along each mode and one random convex combination
    (weights drawn from ``seed``), each with a scaled test copy. Strategy 1
    releases from the static deflection under ``load``.
    """
    if amplitude == 0:
        raise ValueError("training amplitude must be nonzero")
    modes = list(modes)
    amps = np.broadcast_to(np.atleast_1d(np.asarray(amplitude, dtype=float)), (len(modes),))
    ics = []
    if strategy == 1:
        if load is None:
            _, U = model.conservative_modes()
            load = model.K @ (amps[0] * U[:, modes[0]])
        q = static_solve(model, load)
        x0 = np.concatenate([q, np.zeros(model.n)])
        ics.append(("static", "train", x0))
        qt = static_solve(model, test_scale * np.asarray(load))
        ics.append(("static-test", "test", np.concatenate([qt, np.zeros(model.n)])))
        return ics
    if strategy != 2:
        raise ValueError("strategy must be 1 or 2")
    for j, a in zip(modes, amps):
        ics.append((f"mode{j}", "train", modal_initial_condition(model, [(j, a)])))
    if len(modes) > 1:
        rng = np.random.default_rng(seed)
        wts = rng.uniform(0.0, 1.0, size=len(modes))
        wts = np.clip(wts, 0.05, 0.95)
        ics.append(("mix", "train", modal_initial_condition(model, [(j, a * w) for j, a, w in zip(modes, amps, wts)])))
    tests = [(lab + "-test", "test", test_scale * x0) for lab, _, x0 in ics]
    return ics + tests


def build_dataset(trajs, chart: ChartBasis, obs_dof: int, n_periods: float = 5.0, splits=None) -> ReducedDataset:
    out = []
    for i, tr in enumerate(trajs):
        split = "train" if splits is None else splits[i]
        cut = truncate_transient(tr, chart, n_periods)
        out.append(project(cut, chart, obs_dof, split))
    return differentiate(ReducedDataset(out))


def fit_rom(dataset: ReducedDataset, chart: ChartBasis, order: int, nf_order: int | None = None,
            ridge: float = 0.0, obs_dof: int = 0, normal_form: bool = True, **nf_kw) -> SSMRom:
    train = dataset.split("train")
    Yf, Xf = train.stacked(full_grid=True)
    Y, Yd = train.stacked()
    v, vrep = fit_parametrization(Yf, Xf, chart, order, ridge)
    r, rrep = fit_reduced_dynamics(Y, Yd, chart, order, ridge)
    nf = None
    z_max = np.inf
    if normal_form:
        nf = fit_normal_form(Y, Yd, chart, nf_order or order, **nf_kw)
        z_max = float(np.abs(nf.z_from_y(Y)).max())
    a_max = float(np.linalg.norm(Y, axis=1).max())
    report = {"v_residual": vrep.relative_residual, "orthogonality": vrep.orthogonality,
              "r_residual": rrep.relative_residual,
              "nf_residual": None if nf is None else nf.residual}
    return SSMRom(chart, v, r, nf, obs_dof, a_max, z_max, report)


def heldout_nmte(rom: SSMRom, dataset: ReducedDataset, route: str = "nf", split: str = "test"):
    """NMTE of ROM predictions launched from the first sample of each trajectory."""
    from .response import simulate_rom

    errs = []
    for tr in dataset.split(split).trajectories:
        pred = simulate_rom(rom, None, tr.t_full, x0=tr.x[0], route=route)
        errs.append(nmte(pred, (tr.t_full, tr.x)))
    return errs
