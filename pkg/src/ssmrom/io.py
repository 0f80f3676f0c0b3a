"""File formats: matrices, trajectories, JSON documents with complex arrays."""
from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse as sp

from .model import MechModel, PolyForce
from .simulate import Trajectory

__all__ = [
    "encode_complex",
    "decode_complex",
    "write_json",
    "read_json",
    "write_matrix",
    "read_matrix",
    "save_model",
    "load_model",
    "write_trajectory",
    "read_trajectory",
    "file_digest",
]


def encode_complex(a):
    """Nested lists with each entry written as a ``[re, im]`` pair."""
    a = np.asarray(a, dtype=complex)
    return np.stack([a.real, a.imag], axis=-1).tolist()


def decode_complex(obj):
    arr = np.asarray(obj, dtype=float)
    return arr[..., 0] + 1j * arr[..., 1]


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.bool_,)):
        return bool(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True, default=_default) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def write_matrix(path, A):
    """Matrix Market for ``.mtx`` paths, dense CSV otherwise."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix == ".mtx":
        scipy.io.mmwrite(str(path), sp.coo_matrix(np.asarray(A)), precision=17)
    else:
        np.savetxt(path, np.atleast_2d(A), delimiter=",", fmt="%.17g")


def read_matrix(path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".mtx":
        A = scipy.io.mmread(str(path))
        return A.toarray() if sp.issparse(A) else np.asarray(A)
    return np.atleast_2d(np.loadtxt(path, delimiter=","))


def save_model(model: MechModel, directory):
    """Write M, C, K in Matrix Market form plus a JSON descriptor."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name in "MCK":
        write_matrix(d / f"{name}.mtx", getattr(model, name))
    write_json(
        d / "model.json",
        {
            "name": model.name,
            "n": model.n,
            "obs_dof": model.obs_dof,
            "damping": model.damping,
            "matrices": {k: f"{k}.mtx" for k in "MCK"},
            "f_int": model.f_int.to_dict(),
        },
    )


def load_model(directory) -> MechModel:
    d = Path(directory)
    desc = read_json(d / "model.json")
    mats = {k: read_matrix(d / v) for k, v in desc["matrices"].items()}
    damping = desc.get("damping")
    return MechModel(
        mats["M"],
        mats["C"],
        mats["K"],
        PolyForce.from_dict(desc["f_int"]),
        obs_dof=desc.get("obs_dof", 0),
        damping=None if damping is None else tuple(damping),
        name=desc.get("name", "model"),
    )


def write_trajectory(path, traj: Trajectory):
    """CSV of ``time, x_1..x_2n`` on the full-state grid plus a JSON sidecar.

    When the trajectory carries dense channels they are written to
    ``<stem>.dense.csv`` on the dense grid.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    nx = traj.states.shape[1]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x{i}" for i in range(nx)])
        for t, x in zip(traj.full_times, np.real(traj.states)):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in x])
    meta = {"stride": traj.stride, "n_dense": len(traj.times), "label": traj.label, "meta": traj.meta}
    if traj.dense is not None:
        dm = np.asarray(traj.dense_map)
        selector = np.all((dm == 0) | (dm == 1)) and np.all(dm.sum(axis=1) == 1)
        if selector:
            meta["dense_indices"] = np.argmax(dm, axis=1).tolist()
        else:
            meta["dense_map"] = dm.tolist()
        dense_path = path.with_suffix(".dense.csv")
        with dense_path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"c{i}" for i in range(traj.dense.shape[1])])
            for t, c in zip(traj.times, np.real(traj.dense)):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in c])
        meta["dense_file"] = dense_path.name
    write_json(path.with_suffix(".meta.json"), meta)


def read_trajectory(path) -> Trajectory:
    path = Path(path)
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    meta_path = path.with_suffix(".meta.json")
    meta = read_json(meta_path) if meta_path.exists() else {"stride": 1}
    stride = int(meta.get("stride", 1))
    if "dense_file" in meta:
        dense = np.loadtxt(path.parent / meta["dense_file"], delimiter=",", skiprows=1, ndmin=2)
        times, channels = dense[:, 0], dense[:, 1:]
        nx = data.shape[1] - 1
        if "dense_indices" in meta:
            dm = np.zeros((len(meta["dense_indices"]), nx))
            dm[np.arange(dm.shape[0]), meta["dense_indices"]] = 1.0
        else:
            dm = np.asarray(meta["dense_map"], dtype=float)
        return Trajectory(times, data[:, 1:], stride, channels, dm, meta.get("label", ""), meta.get("meta", {}))
    if stride != 1:
        raise ValueError("decimated trajectory without dense channels cannot be reconstructed")
    return Trajectory(data[:, 0], data[:, 1:], 1, label=meta.get("label", ""), meta=meta.get("meta", {}))
