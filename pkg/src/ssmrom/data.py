"""Training material: truncation, projection, differentiation and error metrics."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import ConfigError
from .io import read_json, read_matrix, write_json, write_matrix
from .simulate import Trajectory
from .spectral import ChartBasis

log = logging.getLogger(__name__)

__all__ = [
    "ReducedTrajectory",
    "ReducedDataset",
    "truncate_transient",
    "project",
    "differentiate",
    "fd_derivative",
    "nmte",
    "rk4_step",
    "one_step_error",
    "extract_backbone_pff",
    "PFFResult",
    "save_dataset",
    "load_dataset",
    "real_channels",
]


@dataclass
class ReducedTrajectory:
    """One trajectory in chart coordinates.

    ``y``/``ydot`` live on the dense grid ``t``; ``x`` holds full states on
    ``t[::stride]``; ``s`` is the observable wherever it is available
    (dense grid when the observable DOF is a dense channel).
    """

    t: np.ndarray
    y: np.ndarray
    x: np.ndarray
    stride: int = 1
    ydot: np.ndarray | None = None
    s: np.ndarray | None = None
    split: str = "train"
    label: str = ""

    @property
    def t_full(self):
        return self.t[:: self.stride]

    @property
    def y_full(self):
        return self.y[:: self.stride]


@dataclass
class ReducedDataset:
    trajectories: list
    chart_digest: str = ""
    meta: dict = field(default_factory=dict)

    def split(self, tag):
        return ReducedDataset([tr for tr in self.trajectories if tr.split == tag], self.chart_digest, dict(self.meta))

    def __len__(self):
        return len(self.trajectories)

    def stacked(self, full_grid=False):
        """Concatenated ``(y, ydot)`` (dense) or ``(y, x)`` (full-state grid)."""
        if full_grid:
            return (
                np.concatenate([tr.y_full for tr in self.trajectories]),
                np.concatenate([tr.x for tr in self.trajectories]),
            )
        if any(tr.ydot is None for tr in self.trajectories):
            raise ValueError("derivatives missing: call differentiate first")
        return (
            np.concatenate([tr.y for tr in self.trajectories]),
            np.concatenate([tr.ydot for tr in self.trajectories]),
        )


def real_channels(W0) -> np.ndarray:
    """Real row basis spanning the rows of a (possibly complex) projection."""
    W0 = np.asarray(W0)
    if np.isrealobj(W0):
        return W0.copy()
    m = W0.shape[0] // 2
    return np.vstack([W0[:m].real, W0[:m].imag])


def truncate_transient(traj: Trajectory, chart: ChartBasis, n_periods: float = 5.0) -> Trajectory:
    """Drop the first ``n_periods`` periods of the slowest chart frequency."""
    if n_periods < 0:
        raise ValueError("n_periods must be >= 0")
    if n_periods == 0:
        return traj
    w = float(np.min(chart.frequencies))
    t_cut = traj.times[0] + n_periods * 2 * np.pi / w
    try:
        return traj.slice_from(t_cut)
    except ValueError:
        raise ValueError(f"nothing left after truncating {n_periods} periods") from None


def _dense_projection(traj: Trajectory, W0):
    """``W0 x`` on the dense grid, from dense channels if states are decimated."""
    if traj.stride == 1 and traj.dense is None:
        return traj.states @ W0.T
    if traj.dense is None:
        raise ValueError("decimated trajectory has no dense channels")
    B, *_ = np.linalg.lstsq(traj.dense_map.T, W0.T, rcond=None)
    if np.abs(B.T @ traj.dense_map - W0).max() > 1e-9 * max(1.0, np.abs(W0).max()):
        raise ValueError("dense channels do not span the chart projection")
    return traj.dense @ B


def project(traj: Trajectory, chart: ChartBasis, obs_dof: int | None = None, split="train") -> ReducedTrajectory:
    """Reduced coordinates ``y = W0 x`` on the dense grid."""
    if traj.dim != chart.W0.shape[1]:
        raise ValueError(f"state dimension {traj.dim} does not match chart ({chart.W0.shape[1]})")
    y = _dense_projection(traj, chart.W0)
    s = None
    if obs_dof is not None:
        if traj.stride == 1 and traj.dense is None:
            s = traj.states[:, obs_dof].copy()
        elif traj.dense is not None:
            hit = np.flatnonzero(np.all(traj.dense_map == np.eye(traj.dim)[obs_dof], axis=1))
            s = traj.dense[:, hit[0]].copy() if hit.size else traj.states[:, obs_dof].copy()
    return ReducedTrajectory(traj.times, y, traj.states, traj.stride, None, s, split, traj.label)


_C_START = np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / 12.0
_C_NEXT = np.array([-3.0, -10.0, 18.0, -6.0, 1.0]) / 12.0


def fd_derivative(t, y, rtol: float = 1e-6):
    """Fourth-order finite differences on a uniform grid (one-sided at the ends)."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y)
    if len(t) < 5:
        raise ValueError("need at least 5 samples")
    dts = np.diff(t)
    h = (t[-1] - t[0]) / (len(t) - 1)
    if np.abs(dts - h).max() > rtol * h:
        raise ValueError("non-uniform time grid: resample to a uniform grid first")
    d = np.empty_like(y, dtype=np.result_type(y.dtype, float))
    # stencils applied to differences so constants differentiate to exactly zero
    d[2:-2] = (8.0 * (y[3:-1] - y[1:-3]) - (y[4:] - y[:-4])) / (12.0 * h)
    head, tail = y[:5], y[::-1][:5]
    d[0] = np.tensordot(_C_START[1:], head[1:] - head[0], axes=1) / h
    d[1] = np.tensordot(np.delete(_C_NEXT, 1), np.delete(head, 1, axis=0) - head[1], axes=1) / h
    d[-1] = -np.tensordot(_C_START[1:], tail[1:] - tail[0], axes=1) / h
    d[-2] = -np.tensordot(np.delete(_C_NEXT, 1), np.delete(tail, 1, axis=0) - tail[1], axes=1) / h
    return d


def differentiate(data, scheme: str = "fd4"):
    """Attach ``ydot`` to every trajectory (``ReducedDataset`` or single trajectory)."""
    if scheme != "fd4":
        raise ValueError(f"unknown differentiation scheme {scheme!r}")
    if isinstance(data, ReducedTrajectory):
        return replace(data, ydot=fd_derivative(data.t, data.y))
    return ReducedDataset([differentiate(tr) for tr in data.trajectories], data.chart_digest, dict(data.meta))


def _as_tx(obj):
    if isinstance(obj, Trajectory):
        if obj.stride != 1:
            return obj.full_times, obj.states
        return obj.times, obj.states
    if isinstance(obj, ReducedTrajectory):
        return obj.t_full, obj.x
    t, x = obj
    return np.asarray(t, dtype=float), np.asarray(x)


def nmte(predicted, reference, normalization=None) -> float:
    """Normalized mean trajectory error in percent.

    ``predicted`` is interpolated onto the reference times by a cubic
    spline when the grids differ. ``normalization`` defaults to the
    reference sample of largest norm.
    """
    tp, xp = _as_tx(predicted)
    tr, xr = _as_tx(reference)
    xp = np.asarray(xp).reshape(len(tp), -1)
    xr = np.asarray(xr).reshape(len(tr), -1)
    if len(tp) != len(tr) or np.abs(tp - tr).max() > 1e-9 * max(1.0, np.abs(tr).max()):
        if tr[0] < tp[0] - 1e-9 or tr[-1] > tp[-1] + 1e-9:
            raise ValueError("reference times outside the predicted time range")
        xp = CubicSpline(tp, xp, axis=0)(tr)
    if normalization is None:
        xbar = xr[np.argmax(np.linalg.norm(xr, axis=1))]
    else:
        xbar = np.asarray(normalization)
    nrm = float(np.linalg.norm(xbar))
    if nrm == 0.0:
        raise ValueError("zero normalization")
    return float(100.0 * np.linalg.norm(xr - xp, axis=1).sum() / (len(tr) * nrm))


def rk4_step(f, t, Y, h, substeps=1):
    """Batched classical RK4 over ``h`` in ``substeps`` steps (``Y`` is (P, d))."""
    dt = h / substeps
    for _ in range(substeps):
        k1 = f(t, Y)
        k2 = f(t + dt / 2, Y + dt / 2 * k1)
        k3 = f(t + dt / 2, Y + dt / 2 * k2)
        k4 = f(t + dt, Y + dt * k3)
        Y = Y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t = t + dt
    return Y


def one_step_error(data, rom_field, substeps: int = 4) -> np.ndarray:
    """Per-sample ``|y_{j+1} - Phi_dt(y_j)| / max_j |y_j|`` over all trajectories.

    ``rom_field(Y)`` returns the reduced velocity for a batch of states.
    """
    trajs = data.trajectories if isinstance(data, ReducedDataset) else [data]
    out = []
    for tr in trajs:
        Y = tr.y
        scale = np.linalg.norm(Y, axis=1).max()
        if scale == 0:
            out.append(np.zeros(len(Y) - 1))
            continue
        h = tr.t[1] - tr.t[0]
        Yp = rk4_step(lambda _t, Z: rom_field(Z), 0.0, Y[:-1], h, substeps)
        out.append(np.linalg.norm(Y[1:] - Yp, axis=1) / scale)
    return np.concatenate(out)


@dataclass
class PFFResult:
    t: np.ndarray
    amplitude: np.ndarray
    frequency: np.ndarray
    damping: np.ndarray


def _extrema(t, s):
    ds = np.diff(s)
    idx = np.flatnonzero((ds[:-1] > 0) & (ds[1:] <= 0) | (ds[:-1] < 0) & (ds[1:] >= 0)) + 1
    tp, pv = [], []
    for i in idx:
        y0, y1, y2 = s[i - 1], s[i], s[i + 1]
        den = y0 - 2 * y1 + y2
        h = t[i + 1] - t[i]
        off = 0.5 * (y0 - y2) / den if den != 0 else 0.0
        off = float(np.clip(off, -1.0, 1.0))
        tp.append(t[i] + off * h)
        pv.append(y1 - 0.25 * (y0 - y2) * off)
    return np.array(tp), np.array(pv)


def extract_backbone_pff(signal, t, min_extrema: int = 10) -> PFFResult:
    """Instantaneous amplitude, frequency and damping from a decaying signal.

    Extrema are located with quadratic interpolation; the frequency of a
    half cycle is ``pi / (t_{i+1} - t_i)`` and the decay rate is
    ``ln(p_i / p_{i+2}) / (t_{i+2} - t_i)`` between extrema of equal sign.
    Each sample is placed at the midpoint of its half cycle with the mean
    absolute peak as amplitude.
    """
    s = np.asarray(signal, dtype=float)
    t = np.asarray(t, dtype=float)
    tp, pv = _extrema(t, s)
    # keep alternating extrema only
    keep = [0] if len(pv) else []
    for i in range(1, len(pv)):
        if np.sign(pv[i]) != np.sign(pv[keep[-1]]):
            keep.append(i)
    tp, pv = tp[keep], pv[keep]
    if len(pv) < min_extrema:
        raise ValueError(f"only {len(pv)} extrema found, need {min_extrema}")
    a = np.abs(pv)
    n = len(pv) - 2
    tm = 0.5 * (tp[:n] + tp[1 : n + 1])
    freq = np.pi / (tp[1 : n + 1] - tp[:n])
    amp = 0.5 * (a[:n] + a[1 : n + 1])
    damp = np.log(a[:n] / a[2 : n + 2]) / (tp[2 : n + 2] - tp[:n])
    return PFFResult(tm, amp, freq, damp)


def save_dataset(ds: ReducedDataset, directory):
    """Write each trajectory as CSVs plus a manifest."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, tr in enumerate(ds.trajectories):
        stem = f"traj{i:03d}"
        ycols = np.column_stack([tr.t, tr.y.real, tr.y.imag] + ([tr.ydot.real, tr.ydot.imag] if tr.ydot is not None else []))
        write_matrix(d / f"{stem}_y.csv", ycols)
        write_matrix(d / f"{stem}_x.csv", np.column_stack([tr.t_full, tr.x]))
        if tr.s is not None:
            write_matrix(d / f"{stem}_s.csv", tr.s[:, None])
        entries.append(
            {"stem": stem, "split": tr.split, "label": tr.label, "stride": tr.stride,
             "has_ydot": tr.ydot is not None, "has_s": tr.s is not None, "dim": tr.y.shape[1]}
        )
    write_json(d / "manifest.json", {"chart": ds.chart_digest, "trajectories": entries, "meta": ds.meta})


def load_dataset(directory) -> ReducedDataset:
    d = Path(directory)
    if not (d / "manifest.json").exists():
        raise ConfigError(f"no dataset manifest in {d}")
    man = read_json(d / "manifest.json")
    trajs = []
    for e in man["trajectories"]:
        k = e["dim"]
        Y = read_matrix(d / f"{e['stem']}_y.csv")
        t = Y[:, 0]
        y = Y[:, 1 : 1 + k] + 1j * Y[:, 1 + k : 1 + 2 * k]
        ydot = None
        if e["has_ydot"]:
            ydot = Y[:, 1 + 2 * k : 1 + 3 * k] + 1j * Y[:, 1 + 3 * k : 1 + 4 * k]
        if not np.any(y.imag):
            y = y.real
            ydot = None if ydot is None else ydot.real
        X = read_matrix(d / f"{e['stem']}_x.csv")
        s = read_matrix(d / f"{e['stem']}_s.csv")[:, 0] if e["has_s"] else None
        trajs.append(ReducedTrajectory(t, y, X[:, 1:], e["stride"], ydot, s, e["split"], e["label"]))
    return ReducedDataset(trajs, man.get("chart", ""), man.get("meta", {}))
