"""External forcing in the reduced model at first order in the forcing amplitude.

A forcing ``eps * sum_k f_k exp(i nu_k t)`` enters the first-order system
as ``f1_k = (0, M^-1 f_k)``. Per harmonic the reduced forcing is
``r1_k = W0 f1_k`` (modal charts) and the manifold correction ``v1_k``
solves ``(A - i nu_k I) v1_k = (V0 W0 - I) f1_k``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ChartError, OuterResonanceError, SingularPolarError
from .model import ForcingSpec, MechModel
from .spectral import ChartBasis, Spectrum

log = logging.getLogger(__name__)

__all__ = [
    "first_order_load",
    "ReducedForcing",
    "reduce_forcing",
    "ManifoldForcingCorrection",
    "manifold_correction",
    "nonmodal_forcing",
    "invariance_residual",
    "NormalFormForcing",
    "normal_form_forcing",
    "forced_polar_field",
    "forced_cartesian_field",
]


def first_order_load(model: MechModel, forcing: ForcingSpec) -> np.ndarray:
    """Rows ``(0, M^-1 f_k)`` for every stored harmonic (shape ``(H, 2n)``)."""
    if forcing.n != model.n:
        raise ValueError(f"forcing has {forcing.n} entries for a model with {model.n} DOFs")
    F = np.zeros((len(forcing.keys), 2 * model.n), dtype=complex)
    F[:, model.n :] = forcing.amplitudes @ model.Minv.T
    return F


@dataclass
class ReducedForcing:
    """Forcing of the reduced model.

    ``r1[h]`` is the chart-coordinate coefficient of harmonic ``keys[h]``
    and ``G[h] = P^-1 r1[h]`` its diagonal-coordinate version. For a
    single frequency, ``g = G[key (1,)][:m]`` with ``f = |g|`` and
    ``phi = angle(g) - pi/2``.
    """

    keys: list
    freqs: np.ndarray
    Omega: np.ndarray
    eps: float
    r1: np.ndarray
    G: np.ndarray
    chart_lam: np.ndarray
    band: float = 0.1
    R: tuple = ()
    f1: np.ndarray | None = None
    pinned: tuple = ()

    @property
    def m(self):
        return self.G.shape[1] // 2

    @property
    def periodic(self):
        return len(self.Omega) == 1

    def harmonic(self, key):
        key = tuple(int(v) for v in np.atleast_1d(key))
        return self.keys.index(key)

    @property
    def g(self):
        if not self.periodic:
            raise ValueError("g is defined for single-frequency forcing only")
        return self.G[self.harmonic((1,)), : self.m]

    @property
    def f(self):
        return np.abs(self.g)

    @property
    def phi(self):
        return np.angle(self.g) - np.pi / 2

    def resonant_mask(self):
        """``mask[h, j]``: harmonic ``h`` is near eigenfrequency ``Im lam_j``."""
        w = self.chart_lam.imag
        mask = np.abs(self.freqs[:, None] - w[None, :]) <= self.band * np.abs(w)[None, :]
        if self.pinned:
            # coordinates whose primary harmonic is kept resonant regardless of the band
            m = self.m
            for j in self.pinned:
                mask[self.harmonic((1,)), j] = True
                mask[self.harmonic((-1,)), m + j] = True
        return mask

    def scaled(self, eps):
        out = ReducedForcing(**{k: getattr(self, k) for k in self.__dataclass_fields__})
        out.eps = float(eps)
        return out

    def at(self, t):
        """``eps * sum_h r1[h] exp(i nu_h t)`` in chart coordinates (shape ``(2m,)``)."""
        return self.eps * (np.exp(1j * self.freqs * t) @ self.r1)


def reduce_forcing(model: MechModel, chart: ChartBasis, forcing: ForcingSpec, band: float = 0.1,
                   nonmodal: dict | None = None, pinned=()) -> ReducedForcing:
    """Reduced forcing ``r1 = W0 f1`` (or the non-modal ``r1`` when given).

    ``pinned`` lists coordinates whose primary harmonic is treated as
    resonant at any frequency (used along a continuation branch).
    """
    F1 = first_order_load(model, forcing)
    if nonmodal is not None:
        r1 = nonmodal["r1"]
    else:
        if not chart.modal:
            raise ChartError("non-modal charts need nonmodal_forcing")
        r1 = F1 @ chart.W0.T
    G = r1 @ np.linalg.inv(chart.P).T
    rf = ReducedForcing(list(forcing.keys), np.array(forcing.freqs), np.array(forcing.Omega), forcing.eps,
                        np.asarray(r1), G, chart.lam, band, (), F1, tuple(pinned))
    if rf.periodic:
        mask = rf.resonant_mask()[rf.harmonic((1,)), : chart.m]
        rf.R = tuple(int(k) for k in np.flatnonzero(mask))
    return rf


@dataclass
class ManifoldForcingCorrection:
    keys: list
    freqs: np.ndarray
    V1: np.ndarray
    method: str
    n_modes: int
    eps: float = 1.0

    def at(self, t):
        """``eps * v1(t)`` as a real state correction; ``t`` may be an array."""
        t = np.atleast_1d(t)
        return self.eps * np.real(np.exp(1j * np.outer(t, self.freqs)) @ self.V1)

    def scaled(self, eps):
        return ManifoldForcingCorrection(self.keys, self.freqs, self.V1, self.method, self.n_modes, float(eps))


def _check_outer(lam_out, nu, tol):
    for j, lj in enumerate(lam_out):
        if abs(lj - 1j * nu) < tol * abs(lj):
            raise OuterResonanceError(f"forcing frequency {nu:.6g} resonates with outer eigenvalue {lj:.6g}", j)


def manifold_correction(model: MechModel, spectrum: Spectrum, chart: ChartBasis, forcing: ForcingSpec,
                        N: int | None = None, method: str = "auto", tol: float = 1e-6) -> ManifoldForcingCorrection:
    """Non-resonant part ``v1_k`` of the forced parametrization.

    ``method``: ``direct`` (linear solve), ``modal`` (sum over the ``N``
    slowest outer eigenpairs; ``spectrum`` must keep them), ``proportional``
    (conservative mode shapes) or ``auto``.
    """
    if not chart.modal:
        raise ChartError("non-modal charts need nonmodal_forcing")
    F1 = first_order_load(model, forcing)
    n = model.n
    A = spectrum.A
    proj = chart.V0 @ chart.W0 - np.eye(2 * n)
    outer = [j for j in range(spectrum.count) if j not in chart.mode_indices]
    if N is None:
        N = min(50, n - chart.m)
    if method == "auto":
        method = "direct" if 2 * n <= 400 or len(outer) < N else ("proportional" if spectrum.proportional else "modal")
    V1 = np.zeros((len(forcing.keys), 2 * n), dtype=complex)
    lam_out = np.concatenate([spectrum.lam[outer], np.conj(spectrum.lam[outer])]) if outer else np.zeros(0)
    for h, (nu, f1) in enumerate(zip(forcing.freqs, F1)):
        _check_outer(lam_out, nu, tol)
        b = proj @ f1
        if method == "direct":
            V1[h] = np.linalg.solve(A - 1j * nu * np.eye(2 * n), b)
        elif method == "modal":
            sel = outer[:N]
            for j in sel:
                for lj, vj, wj in ((spectrum.lam[j], spectrum.V[:, j], spectrum.W[j]),
                                   (np.conj(spectrum.lam[j]), np.conj(spectrum.V[:, j]), np.conj(spectrum.W[j]))):
                    V1[h] += vj * (wj @ b) / (lj - 1j * nu)
        elif method == "proportional":
            if not spectrum.proportional:
                raise ChartError("proportional fast path needs proportional damping")
            alpha, beta = spectrum.damping
            fk = forcing.amplitudes[h]
            wall, Uall = model.conservative_modes()
            # exclude chart modes by index in the conservative ordering
            chart_cols = {int(np.argmin(np.abs(wall - spectrum.omega0[j]))) for j in chart.mode_indices}
            cols = [j for j in range(n) if j not in chart_cols][:N]
            vq = np.zeros(n, dtype=complex)
            for j in cols:
                u, w0 = Uall[:, j], wall[j]
                vq += (u @ fk) / (w0**2 - nu**2 + 1j * (alpha + beta * w0**2) * nu) * u
            V1[h, :n] = vq
            V1[h, n:] = 1j * nu * vq
        else:
            raise ValueError(f"unknown method {method!r}")
    return ManifoldForcingCorrection(list(forcing.keys), np.array(forcing.freqs), V1, method, N, forcing.eps)


def nonmodal_forcing(model: MechModel, chart: ChartBasis, forcing: ForcingSpec, A=None, tol: float = 1e-10):
    """Per-harmonic ``(r1, v1)`` for an arbitrary chart.

    ``v1`` solves ``(i nu I - (I - V0 W0) A) v = (I - V0 W0) f1`` and
    ``r1 = W0 A v1 + W0 f1``.
    """
    from .spectral import first_order_operator

    A = first_order_operator(model) if A is None else A
    F1 = first_order_load(model, forcing)
    n2 = A.shape[0]
    Q = np.eye(n2) - chart.V0 @ chart.W0
    QA = Q @ A
    r1 = np.zeros((len(forcing.keys), chart.W0.shape[0]), dtype=complex)
    V1 = np.zeros((len(forcing.keys), n2), dtype=complex)
    for h, (nu, f1) in enumerate(zip(forcing.freqs, F1)):
        Sys = 1j * nu * np.eye(n2) - QA
        s = np.linalg.svd(Sys, compute_uv=False)
        if s[-1] <= tol * s[0]:
            raise OuterResonanceError(f"harmonic system singular at frequency {nu:.6g}", -1)
        v = np.linalg.solve(Sys, Q @ f1)
        V1[h] = v
        r1[h] = chart.W0 @ (A @ v) + chart.W0 @ f1
    corr = ManifoldForcingCorrection(list(forcing.keys), np.array(forcing.freqs), V1, "nonmodal", A.shape[0] // 2 - chart.m, forcing.eps)
    return {"r1": r1, "correction": corr}


def invariance_residual(model: MechModel, chart: ChartBasis, forcing: ForcingSpec, r1,
                        corr: ManifoldForcingCorrection, A=None) -> float:
    """Max over harmonics of ``|V0 r1_k + i nu_k v1_k - A v1_k - f1_k|``."""
    from .spectral import first_order_operator

    A = first_order_operator(model) if A is None else A
    F1 = first_order_load(model, forcing)
    if len(r1) != len(F1) or len(corr.V1) != len(F1):
        raise ValueError("harmonic tables do not match the forcing")
    res = 0.0
    for h, nu in enumerate(forcing.freqs):
        R = chart.V0 @ r1[h] + 1j * nu * corr.V1[h] - A @ corr.V1[h] - F1[h]
        res = max(res, float(np.linalg.norm(R)))
    return res


@dataclass
class NormalFormForcing:
    """Forcing terms of the normal form.

    ``n1[h, j]`` multiplies ``exp(i nu_h t)`` in ``dz_j/dt``; ``h1[h, j]``
    in ``zeta_j = z_j + h_j(z) + eps h1_j(t)``. Rows run over all stored
    harmonics, columns over the 2m diagonal coordinates.
    """

    freqs: np.ndarray
    n1: np.ndarray
    h1: np.ndarray
    eps: float
    mask: np.ndarray = field(default=None)
    G: np.ndarray | None = None

    def G_at(self, t):
        """Total diagonal-coordinate forcing ``eps * sum_h G[h] exp(i nu_h t)``."""
        return self.eps * (np.exp(1j * self.freqs * t) @ self.G)

    def n1_at(self, t):
        return self.eps * (np.exp(1j * self.freqs * t) @ self.n1)

    def h1_at(self, t):
        t = np.atleast_1d(t)
        return self.eps * (np.exp(1j * np.outer(t, self.freqs)) @ self.h1)

    def scaled(self, eps):
        return NormalFormForcing(self.freqs, self.n1, self.h1, float(eps), self.mask, self.G)


def normal_form_forcing(lam, rf: ReducedForcing) -> NormalFormForcing:
    """Split ``G`` into resonant (``n1``) and removable (``h1``) parts.

    A harmonic is kept in ``n1_j`` when its frequency lies within the
    resonance band of ``Im lam_j``; otherwise it is removed by
    ``h1_j = G_j / (i nu - lam_j)``.
    """
    lam = np.asarray(lam)
    mask = rf.resonant_mask()
    n1 = np.where(mask, rf.G, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        h1 = np.where(mask, 0.0, rf.G / (1j * rf.freqs[:, None] - lam[None, :]))
    return NormalFormForcing(rf.freqs, n1, h1, rf.eps, mask, np.asarray(rf.G))


def forced_polar_field(nf, rf: ReducedForcing):
    """Polar field ``(rho_dot, theta_dot)(rho, theta, t)`` of the forced normal form.

    Forcing acts on the coordinates in ``rf.R`` through
    ``f_k sin(Omega t + phi_k - theta_k)`` and ``(f_k / rho_k) cos(...)``.
    """
    if not rf.periodic:
        raise ValueError("polar forcing is defined for single-frequency forcing")
    f = rf.eps * rf.f
    phi = rf.phi
    Om = float(rf.Omega[0])
    R = np.zeros(nf.m, dtype=bool)
    R[list(rf.R)] = True

    def field(rho, theta, t):
        rho = np.asarray(rho, dtype=float)
        theta = np.asarray(theta, dtype=float)
        if np.any(R & (rho == 0) & (f != 0)):
            raise SingularPolarError("polar field evaluated at zero amplitude under forcing")
        a, w = nf.alpha_omega(rho[None, :], theta[None, :])
        a, w = a[0], w[0]
        arg = Om * t + phi - theta
        rdot = -a * rho
        tdot = w.copy()
        rdot[R] -= f[R] * np.sin(arg[R])
        tdot[R] += f[R] / rho[R] * np.cos(arg[R])
        return rdot, tdot

    return field


def forced_cartesian_field(nf, nff: NormalFormForcing):
    """Cartesian alternative ``zdot(z, t)`` valid through ``z = 0``."""
    m = nf.m

    def field(z, t):
        z = np.atleast_2d(z)
        return nf.field(z) + nff.n1_at(t)[:m]

    return field
