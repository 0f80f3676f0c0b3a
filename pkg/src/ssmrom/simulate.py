"""Time integration, static solves and training initial conditions."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .errors import IntegrationError, ModelError, StaticSolveError
from .model import ForcingSpec, MechModel

log = logging.getLogger(__name__)

__all__ = [
    "Trajectory",
    "integrate",
    "integrate_newmark",
    "static_solve",
    "modal_initial_condition",
    "mode_amplitude_for_observable",
    "nonlinearity_ratio_scan",
    "time_grid",
]


@dataclass
class Trajectory:
    """Sampled trajectory on a dense time grid.

    Full states are kept on every ``stride``-th dense sample only; channels
    listed in ``dense_map`` (rows are linear functionals of the state) are
    kept on the whole dense grid in ``dense``.
    """

    times: np.ndarray
    states: np.ndarray
    stride: int = 1
    dense: np.ndarray | None = None
    dense_map: np.ndarray | None = None
    label: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.atleast_2d(np.asarray(self.states))
        self.stride = int(self.stride)
        if self.times.ndim != 1 or len(self.times) == 0:
            raise ValueError("times must be a non-empty 1-D array")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if len(self.states) != len(self.full_times):
            raise ValueError(
                f"{len(self.states)} full states for {len(self.full_times)} decimated samples"
            )
        if self.dense is not None:
            self.dense = np.asarray(self.dense).reshape(len(self.times), -1)
            self.dense_map = np.atleast_2d(np.asarray(self.dense_map))
            if self.dense_map.shape != (self.dense.shape[1], self.states.shape[1]):
                raise ValueError("dense_map shape does not match dense channels")

    @property
    def full_times(self):
        return self.times[:: self.stride]

    @property
    def dim(self):
        return self.states.shape[1]

    def __len__(self):
        return len(self.times)

    def decimate(self, stride, dense_map=None):
        """Keep full states every ``stride`` samples (requires ``self.stride == 1``)."""
        if self.stride != 1:
            raise ValueError("trajectory already decimated")
        dense = None if dense_map is None else self.states @ np.atleast_2d(dense_map).T
        return Trajectory(
            self.times, self.states[::stride], stride, dense, dense_map, self.label, dict(self.meta)
        )

    def slice_from(self, t_start):
        """Drop every sample before ``t_start``, keeping decimation aligned."""
        i0 = int(np.searchsorted(self.times, t_start - 1e-12 * max(1.0, abs(t_start))))
        i0 = -(-i0 // self.stride) * self.stride  # first dense index on the full grid
        if i0 >= len(self.times):
            raise ValueError("empty remainder")
        dense = None if self.dense is None else self.dense[i0:]
        return Trajectory(
            self.times[i0:],
            self.states[i0 // self.stride :],
            self.stride,
            dense,
            self.dense_map,
            self.label,
            dict(self.meta),
        )


# local tolerances sit below ``tol`` so accumulated error stays near it
_SAFETY = 0.1


def time_grid(t_span, dt):
    t0, t1 = (float(v) for v in t_span)
    n = int(round((t1 - t0) / dt))
    return t0 + dt * np.arange(n + 1)


def integrate(
    model: MechModel,
    forcing: ForcingSpec | None,
    x0,
    t_span,
    tol: float = 1e-9,
    dt: float | None = None,
    t_eval=None,
    stride: int = 1,
    dense_map=None,
    method: str = "DOP853",
    atol: float | None = None,
    label: str = "",
) -> Trajectory:
    """Adaptive Runge-Kutta integration of the first-order full model.

    Output is sampled on ``t_eval`` or on a uniform grid of step ``dt``
    (default: 200 samples over ``t_span``). ``stride`` and ``dense_map``
    control dual-rate storage, see :class:`Trajectory`.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    t0, t1 = (float(v) for v in t_span)
    if not (np.isfinite(t0) and np.isfinite(t1)) or t1 <= t0:
        raise ValueError("t_span must be finite and increasing")
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (2 * model.n,):
        raise ModelError(f"x0 must have length {2 * model.n}")
    if t_eval is None:
        t_eval = time_grid((t0, t1), dt if dt is not None else (t1 - t0) / 200)
        t_eval = t_eval[t_eval <= t1 + 1e-12 * max(1.0, abs(t1))]
        t_eval[-1] = min(t_eval[-1], t1)
    t_eval = np.asarray(t_eval, dtype=float)
    if atol is None:
        scale = np.abs(x0).max(initial=0.0)
        if forcing is not None:
            scale = max(scale, forcing.eps * np.abs(forcing.amplitudes).max(initial=0.0))
        atol = _SAFETY * tol * max(scale, 1e-6)
    rhs = model.vector_field(forcing)
    sol = solve_ivp(rhs, (t0, t1), x0, method=method, t_eval=t_eval, rtol=_SAFETY * tol, atol=atol)
    if sol.status == -1:
        t_fail = sol.t[-1] if sol.t.size else t0
        raise IntegrationError(f"integration failed: {sol.message}", t_fail)
    X = sol.y.T
    if not np.all(np.isfinite(X)):
        bad = np.argmax(~np.all(np.isfinite(X), axis=1))
        raise IntegrationError("non-finite state", t_eval[bad])
    traj = Trajectory(sol.t, X, label=label)
    if stride != 1 or dense_map is not None:
        traj = traj.decimate(stride, dense_map)
    return traj


def integrate_newmark(
    model: MechModel,
    forcing: ForcingSpec | None,
    x0,
    t_span,
    dt: float,
    beta: float = 0.25,
    gamma: float = 0.5,
    tol: float = 1e-10,
    max_iter: int = 25,
    label: str = "",
) -> Trajectory:
    """Implicit Newmark integration (average acceleration by default).

    Unconditionally stable on linear problems for ``2 beta >= gamma >= 1/2``.
    The nonlinear equilibrium is solved by Newton at each step.
    """
    n = model.n
    M, C, K, fnl = model.M, model.C, model.K, model.f_int
    t = time_grid(t_span, dt)
    x0 = np.asarray(x0, dtype=float)
    q, v = x0[:n].copy(), x0[n:].copy()

    def load(tk):
        return np.zeros(n) if forcing is None else forcing(tk)

    a = np.linalg.solve(M, load(t[0]) - C @ v - K @ q - fnl(q))
    out = np.empty((len(t), 2 * n))
    out[0] = x0
    c0 = 1.0 / (beta * dt**2)
    c1 = gamma / (beta * dt)
    for k in range(1, len(t)):
        F = load(t[k])
        qn = q + dt * v + dt**2 * (0.5 - beta) * a  # predictor with a_{k+1} = 0
        vp = v + dt * (1 - gamma) * a
        scale = 1.0 + np.abs(F).max(initial=0.0) + np.abs(K @ q).max(initial=0.0)
        for _ in range(max_iter):
            an = c0 * (qn - q - dt * v) - (0.5 - beta) / beta * a
            vn = vp + gamma * dt * an
            R = M @ an + C @ vn + K @ qn + fnl(qn) - F
            if np.abs(R).max() <= tol * scale:
                break
            J = c0 * M + c1 * C + K + fnl.jacobian(qn)
            qn = qn - np.linalg.solve(J, R)
        else:
            raise IntegrationError("Newmark Newton iteration did not converge", t[k])
        an = c0 * (qn - q - dt * v) - (0.5 - beta) / beta * a
        v = vp + gamma * dt * an
        q, a = qn, an
        out[k, :n], out[k, n:] = q, v
    return Trajectory(t, out, label=label)


def static_solve(
    model: MechModel,
    load,
    n_steps: int = 10,
    tol: float = 1e-10,
    max_iter: int = 30,
    max_refinements: int = 8,
) -> np.ndarray:
    """Solve ``K q + f_int(q) = load`` by Newton with uniform load stepping.

    The number of increments doubles when Newton fails on an increment.
    """
    load = np.asarray(load, dtype=float)
    K, fnl = model.K, model.f_int
    target = tol * (1.0 + np.linalg.norm(load))
    if np.linalg.norm(load) == 0.0:
        return np.zeros(model.n)

    def newton(q, lam):
        res = np.inf
        for _ in range(max_iter):
            R = K @ q + fnl(q) - lam * load
            res = np.linalg.norm(R)
            if res <= target:
                return q, res, True
            try:
                q = q - np.linalg.solve(K + fnl.jacobian(q), R)
            except np.linalg.LinAlgError:
                return q, res, False
            if not np.all(np.isfinite(q)):
                return q, res, False
        R = K @ q + fnl(q) - lam * load
        res = np.linalg.norm(R)
        return q, res, res <= target

    q = np.zeros(model.n)
    lam, last_res = 0.0, np.inf
    steps = n_steps
    refinements = 0
    while lam < 1.0:
        dlam = 1.0 / steps
        lam_next = min(1.0, lam + dlam)
        q_try, res, ok = newton(q.copy(), lam_next)
        if ok:
            q, lam = q_try, lam_next
            continue
        last_res = res
        refinements += 1
        if refinements > max_refinements:
            raise StaticSolveError(last_res, lam)
        steps *= 2
    return q


def modal_initial_condition(model: MechModel, modes) -> np.ndarray:
    """Displacement along mass-normalized conservative modes, zero velocity.

    ``modes`` is a list of ``(index, amplitude)`` pairs (0-based indices).
    """
    _, U = model.conservative_modes()
    q0 = np.zeros(model.n)
    for j, amp in modes:
        if not 0 <= j < model.n:
            raise IndexError(f"mode index {j} out of range")
        if not np.isfinite(amp):
            raise ValueError("mode amplitude must be finite")
        q0 = q0 + amp * U[:, j]
    x0 = np.concatenate([q0, np.zeros(model.n)])
    if len(modes) == 1:
        log.debug("modal IC along mode %d: |s(x0)| = %.6g", modes[0][0], abs(model.observable(x0)))
    return x0


def mode_amplitude_for_observable(model: MechModel, mode: int, a_target: float) -> float:
    """Modal amplitude giving ``|s(x0)| = a_target`` for a single-mode IC."""
    _, U = model.conservative_modes()
    u = U[model.obs_dof, mode]
    if u == 0:
        raise ModelError(f"observable DOF is a node of mode {mode}")
    return a_target / abs(u)


def nonlinearity_ratio_scan(model: MechModel, mode: int, amplitudes) -> np.ndarray:
    """``|f_int(a u)| / |K a u + f_int(a u)|`` along a mode shape."""
    amplitudes = np.asarray(amplitudes, dtype=float)
    if np.any(amplitudes <= 0) or np.any(np.diff(amplitudes) < 0):
        raise ValueError("amplitudes must be positive and ascending")
    _, U = model.conservative_modes()
    u = U[:, mode]
    out = np.empty(len(amplitudes))
    for i, a in enumerate(amplitudes):
        fn = model.f_int(a * u)
        out[i] = np.linalg.norm(fn) / np.linalg.norm(model.K @ (a * u) + fn)
    return out
