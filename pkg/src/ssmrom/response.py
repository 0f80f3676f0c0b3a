"""Forced response: continuation of periodic orbits, backbones, ROM simulation."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from math import lcm

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import minimize_scalar

from .errors import ConvergenceError, DivergenceError, SSMError
from .forcing import (
    ManifoldForcingCorrection,
    NormalFormForcing,
    ReducedForcing,
    manifold_correction,
    nonmodal_forcing,
    normal_form_forcing,
    reduce_forcing,
)
from .model import ForcingSpec, MechModel
from .rom import SSMRom, from_real, to_real
from .simulate import Trajectory
from .spectral import Spectrum

log = logging.getLogger(__name__)

__all__ = [
    "ForcedBundle",
    "prepare_forcing",
    "amp_phase",
    "CoRotatingSystem",
    "corotating_field",
    "FRCBranch",
    "continue_frc",
    "evaluate_branch",
    "frc_zero_level",
    "BackboneCurve",
    "backbone",
    "simulate_rom",
    "linear_frf",
    "direct_steady_state",
]


@dataclass
class ForcedBundle:
    """Everything the ROM needs about one forcing: ``r1``, ``v1`` and normal-form terms."""

    rf: ReducedForcing
    corr: ManifoldForcingCorrection
    nff: NormalFormForcing | None
    forcing: ForcingSpec

    def scaled(self, eps):
        return ForcedBundle(self.rf.scaled(eps), self.corr.scaled(eps),
                            None if self.nff is None else self.nff.scaled(eps), self.forcing.scaled(eps))


def prepare_forcing(rom: SSMRom, model: MechModel, spectrum: Spectrum | None, forcing: ForcingSpec,
                    band: float = 0.1, N: int | None = None, pinned=()) -> ForcedBundle:
    chart = rom.chart
    if chart.modal:
        rf = reduce_forcing(model, chart, forcing, band, pinned=pinned)
        corr = manifold_correction(model, spectrum, chart, forcing, N=N)
    else:
        nm = nonmodal_forcing(model, chart, forcing, spectrum.A if spectrum is not None else None)
        rf = reduce_forcing(model, chart, forcing, band, nonmodal=nm, pinned=pinned)
        corr = nm["correction"]
    nff = None if rom.nf is None else normal_form_forcing(rom.nf.lam, rf)
    return ForcedBundle(rf, corr, nff, forcing)


def amp_phase(s, t, Omega, upsample: int = 16):
    """Amplitude ``max |s|`` and phase ``angle(int s e^{-i Omega t} dt)`` of one period.

    ``t`` must be a uniform grid covering the period without its endpoint;
    the maximum is refined on a trigonometric interpolant.
    """
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    n = len(s)
    S = np.fft.rfft(s)
    N = n * upsample
    Sp = np.zeros(N // 2 + 1, dtype=complex)
    Sp[: len(S)] = S
    if n % 2 == 0:
        Sp[len(S) - 1] *= 0.5  # split Nyquist bin
    fine = np.fft.irfft(Sp, N) * upsample
    k = int(np.argmax(np.abs(fine)))
    sign = np.sign(fine[k]) or 1.0
    coef = Sp * (2.0 / n)
    coef[0] *= 0.5
    harm = np.arange(len(coef))

    def neg(x):
        return -sign * np.real(coef @ np.exp(1j * harm * x))

    # polish the upsampled maximum on the interpolant
    h = 2 * np.pi / N
    x = minimize_scalar(neg, bounds=(k * h - h, k * h + h), method="bounded", options={"xatol": 1e-12}).x
    amp = float(max(-neg(x), np.abs(fine).max(), np.abs(s).max()))
    phase = float(np.angle(np.sum(s * np.exp(-1j * Omega * t))))
    return amp, phase


def _rational(x, max_den=6, tol=0.05):
    fr = Fraction(x).limit_denominator(max_den)
    if abs(float(fr) - x) > tol * x:
        return None
    return fr


class CoRotatingSystem:
    """Fixed-point form of the forced normal form in frames ``w_j = z_j e^{-i eta_j Omega t}``.

    ``ref`` is the forced coordinate. Coordinates with no rational relation
    to it are dropped (their forced amplitude vanishes at first order).
    """

    def __init__(self, nf, g, ref: int, R=None, eta=None, max_den=6, rel_tol=0.05, G=None, mult=None):
        self.nf = nf
        m = nf.m
        w = nf.Lam.imag
        if eta is None:
            eta = {}
            for j in range(m):
                fr = _rational(w[j] / w[ref], max_den, rel_tol)
                if fr is not None:
                    eta[j] = fr
        self.eta_frac = dict(eta)
        self.active = sorted(self.eta_frac)
        self.eta = np.array([float(self.eta_frac.get(j, 0)) for j in range(m)])
        self.g = np.asarray(g, dtype=complex)
        self.R = (ref,) if R is None else tuple(R)
        self.ref = ref
        for j in self.R:
            if j not in self.eta_frac or self.eta_frac[j] != 1:
                raise SSMError(f"forced coordinate {j} is not locked 1:1 to the forcing frequency")
        # every retained term with nonzero coefficient must be time independent
        for j in self.active:
            for e, c in zip(nf.structure.terms[j], nf.ncoef[j]):
                if c == 0:
                    continue
                p, q = e[:m], e[m:]
                if any((p[i] or q[i]) and i not in self.eta_frac for i in range(m)):
                    continue
                if sum(Fraction(int(p[i] - q[i])) * self.eta_frac[i] for i in self.active) != self.eta_frac[j]:
                    raise SSMError(f"normal-form term {tuple(e)} of coordinate {j} stays time dependent")
        self.period_factor = lcm(*[self.eta_frac[j].denominator for j in self.active])
        self.mask = np.zeros(m, dtype=bool)
        self.mask[list(self.R)] = True
        # state-dependent forcing, averaged over one period of the frame
        self.G = None if G is None else np.asarray(G, dtype=complex)
        self.mult = None if mult is None else np.asarray(mult, dtype=float)
        if self.G is not None:
            order = max(int(nf.hinv.order), 1)
            K = 8 * (order + 2) * self.period_factor
            self._tau = np.arange(K) * (2 * np.pi * self.period_factor / K)

    def averaged_forcing(self, W):
        """Period average of ``(dz/dzeta - I) G(t)`` seen in the co-rotating frame."""
        if self.G is None:
            return np.zeros(self.nf.m, dtype=complex)
        m = self.nf.m
        tau = self._tau
        Z = W[None, :] * np.exp(1j * np.outer(tau, self.eta))
        gain = self.nf.forcing_gain(Z)
        gain[:, :, :m] -= np.eye(m)
        Fz = np.exp(1j * np.outer(tau, self.mult)) @ self.G
        c = np.einsum("kij,kj->ki", gain, Fz) * np.exp(-1j * np.outer(tau, self.eta))
        return c.mean(axis=0)

    @property
    def p(self):
        return len(self.active)

    def unpack(self, u):
        m = self.nf.m
        W = np.zeros(m, dtype=complex)
        a = self.active
        W[a] = u[: self.p] + 1j * u[self.p :]
        return W

    def pack(self, W):
        a = self.active
        return np.concatenate([W[a].real, W[a].imag])

    def field(self, u, Omega, eps):
        W = self.unpack(u)
        dW = self.nf.field(W[None, :])[0] - 1j * self.eta * Omega * W + eps * np.where(self.mask, self.g, 0)
        if self.G is not None:
            dW = dW + eps * self.averaged_forcing(W)
        return np.concatenate([dW[self.active].real, dW[self.active].imag])

    def jacobian(self, u, Omega, eps=0.0):
        """``(dF/du, dF/dOmega)`` of the real fixed-point system."""
        W = self.unpack(u)
        Jz, Jzb = self.nf.field_jacobian(W[None, :])
        Jz, Jzb = Jz[0], Jzb[0]
        Jz = Jz - np.diag(1j * self.eta * Omega)
        a = self.active
        Jz, Jzb = Jz[np.ix_(a, a)], Jzb[np.ix_(a, a)]
        Dx = Jz + Jzb
        Dy = 1j * (Jz - Jzb)
        J = np.block([[Dx.real, Dy.real], [Dx.imag, Dy.imag]])
        if self.G is not None and eps != 0:
            J = J + eps * self._averaged_jacobian(u)
        dO = -1j * self.eta[a] * W[a]
        return J, np.concatenate([dO.real, dO.imag])


    def _averaged_jacobian(self, u):
        a = self.active
        base = self.averaged_forcing(self.unpack(u))[a]
        J = np.empty((len(u), len(u)))
        for i in range(len(u)):
            du = 1e-7 * max(1.0, abs(u[i]))
            up = u.copy()
            up[i] += du
            d = (self.averaged_forcing(self.unpack(up))[a] - base) / du
            J[:, i] = np.concatenate([d.real, d.imag])
        return J


def corotating_field(nf, bundle_or_g, Omega, eps=1.0, ref=None):
    """Autonomous field ``(rho_dot, psi_dot)`` in the co-rotating frame.

    ``psi_j = theta_j - eta_j Omega t``. Returns ``(field, system)``.
    """
    g = bundle_or_g.rf.g if isinstance(bundle_or_g, ForcedBundle) else np.asarray(bundle_or_g)
    R = None
    if ref is None:
        ref = int(np.argmin(np.abs(nf.Lam.imag - Omega)))
    sys = CoRotatingSystem(nf, g, ref, R)

    def field(rho, psi):
        W = np.asarray(rho) * np.exp(1j * np.asarray(psi))
        dW = sys.nf.field(W[None, :])[0] - 1j * sys.eta * Omega * W + eps * np.where(sys.mask, sys.g, 0)
        # d/dt (rho e^{i psi}) = (rho_dot + i rho psi_dot) e^{i psi}
        q = dW * np.exp(-1j * np.asarray(psi))
        with np.errstate(divide="ignore", invalid="ignore"):
            return q.real, np.where(np.asarray(rho) > 0, q.imag / np.asarray(rho), np.nan)

    return field, sys


@dataclass
class FRCBranch:
    """Continuation samples of periodic responses.

    ``W`` holds the co-rotating amplitudes ``w_j = rho_j e^{i psi_j}``;
    ``stability`` is 1 (stable), 0 (unstable) or -1 (marginal).
    """

    Omega: np.ndarray
    W: np.ndarray
    stability: np.ndarray
    eigenvalues: list
    folds: list
    eps: float
    eta: np.ndarray
    period_factor: int = 1
    residual: np.ndarray | None = None
    amp: np.ndarray | None = None
    phase: np.ndarray | None = None
    extra: dict = field(default_factory=dict)
    truncated: bool = False

    @property
    def rho(self):
        return np.abs(self.W)

    @property
    def psi(self):
        return np.angle(self.W)

    def __len__(self):
        return len(self.Omega)

    def table(self):
        """Columns for CSV output."""
        cols = {"Omega": self.Omega, "Omega_Hz": self.Omega / (2 * np.pi)}
        if self.amp is not None:
            cols["amp"] = self.amp
            cols["phase"] = self.phase
        for k, v in self.extra.items():
            cols[k] = v
        cols["stable"] = self.stability.astype(float)
        for j in range(self.W.shape[1]):
            cols[f"rho{j + 1}"] = self.rho[:, j]
            cols[f"psi{j + 1}"] = self.psi[:, j]
        return cols


def _classify(J, margin=1e-8):
    ev = np.linalg.eigvals(J)
    mx = ev.real.max()
    if mx < -margin:
        return 1, ev
    if mx > margin:
        return 0, ev
    return -1, ev


def _null_vector(Jfull):
    _, _, Vt = np.linalg.svd(Jfull)
    return Vt[-1]


def continue_frc(
    nf,
    g,
    Omega_range,
    eps: float,
    ref: int | None = None,
    ds: float = 0.005,
    ds_min: float = 1e-5,
    ds_max: float = 0.02,
    max_steps: int = 20000,
    tol: float = 1e-12,
    rho_max: float | None = None,
    eta=None,
    rf: ReducedForcing | None = None,
) -> FRCBranch:
    """Pseudo-arclength continuation of co-rotating fixed points over ``Omega_range``.

    Variables are scaled by the reference frequency and the linear peak
    amplitude; the predictor is the secant (tangent at the first step) and
    the corrector is Newton on the bordered system. With ``rf`` the
    state dependence of the forcing in normal-form coordinates is kept in
    averaged form.
    """
    O0, O1 = (float(v) for v in Omega_range)
    if O1 <= O0:
        raise ValueError("Omega_range must be increasing")
    g = np.asarray(g, dtype=complex)
    if ref is None:
        ref = int(np.argmin(np.abs(nf.Lam.imag - 0.5 * (O0 + O1))))
    G = mult = None
    if rf is not None:
        if not rf.periodic:
            raise ValueError("continuation needs single-frequency forcing")
        G, mult = rf.G, np.array([k[0] for k in rf.keys], dtype=float)
    sys = CoRotatingSystem(nf, g, ref, eta=eta, G=G, mult=mult)
    lam = nf.Lam
    wr = abs(lam[ref].imag)
    su = max(eps * abs(g[ref]) / abs(lam[ref].real), 1e-300)
    scale = np.concatenate([np.full(2 * sys.p, su), [wr]])

    def F(X):
        u, Om = X[:-1] * scale[:-1], X[-1] * scale[-1]
        return sys.field(u, Om, eps) / (su * wr)

    def JF(X):
        u, Om = X[:-1] * scale[:-1], X[-1] * scale[-1]
        Ju, JO = sys.jacobian(u, Om, eps)
        return np.hstack([Ju * scale[:-1], (JO * scale[-1])[:, None]]) / (su * wr)

    # seed: linear response, then Newton at fixed Omega
    W0 = np.zeros(nf.m, dtype=complex)
    W0[ref] = -eps * g[ref] / (lam[ref] - 1j * O0)
    X = np.concatenate([sys.pack(W0) / su, [O0 / wr]])
    for _ in range(100):
        r = F(X)
        if np.linalg.norm(r) < tol:
            break
        J = JF(X)[:, :-1]
        X[:-1] -= np.linalg.solve(J, r)
    else:
        raise ConvergenceError("no converged seed at the start of the frequency range", [float(np.linalg.norm(F(X)))])
    pts = [X.copy()]
    t = _null_vector(JF(X))
    if t[-1] < 0:
        t = -t
    tangents = [t]
    h = ds
    truncated = False
    for _ in range(max_steps):
        Xp = pts[-1] + h * tangents[-1]
        Xc = Xp.copy()
        ok = False
        for it in range(12):
            r = np.concatenate([F(Xc), [tangents[-1] @ (Xc - Xp)]])
            if np.linalg.norm(r) < tol:
                ok = True
                break
            Jb = np.vstack([JF(Xc), tangents[-1]])
            try:
                Xc = Xc - np.linalg.solve(Jb, r)
            except np.linalg.LinAlgError:
                break
        if not ok:
            h *= 0.5
            if h < ds_min:
                raise ConvergenceError("continuation step collapsed", [float(np.linalg.norm(r))])
            continue
        tn = _null_vector(JF(Xc))
        if tn @ tangents[-1] < 0:
            tn = -tn
        pts.append(Xc)
        tangents.append(tn)
        if it <= 3:
            h = min(h * 1.5, ds_max)
        elif it >= 7:
            h = max(h * 0.5, ds_min)
        Om = Xc[-1] * wr
        if Om > O1 or Om < O0 - 1e-9 * wr:
            break
        if rho_max is not None and np.abs(sys.unpack(Xc[:-1] * su)).max() > rho_max:
            log.warning("branch left the validity range at Omega=%.6g; truncated", Om)
            truncated = True
            break
    P = np.array(pts)
    T = np.array(tangents)
    Om = P[:, -1] * wr
    keep = (Om >= O0 - 1e-9 * wr) & (Om <= O1 + 1e-9 * wr)
    W = np.array([sys.unpack(x[:-1] * su) for x in P])
    stab, eigs, res = [], [], []
    for x in P:
        u, o = x[:-1] * su, x[-1] * wr
        code, ev = _classify(sys.jacobian(u, o, eps)[0])
        stab.append(code)
        eigs.append(ev)
        res.append(float(np.linalg.norm(sys.field(u, o, eps))))
    dO = T[:, -1]
    folds = [i for i in range(1, len(dO)) if np.sign(dO[i]) != np.sign(dO[i - 1]) and dO[i] != 0]
    idx = np.flatnonzero(keep)
    remap = {int(i): k for k, i in enumerate(idx)}
    folds = [remap[i] for i in folds if i in remap]
    return FRCBranch(Om[idx], W[idx], np.array(stab)[idx], [eigs[i] for i in idx], folds, float(eps),
                     sys.eta, sys.period_factor, np.array(res)[idx], truncated=truncated)


def frc_zero_level(nf, g, eps, Omega, rho, theta=None):
    """Single-mode check ``((omega(rho) - Omega)^2 + alpha(rho)^2) rho^2 - f^2``."""
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    a, w = nf.alpha_omega(rho[:, None])
    f = eps * abs(np.atleast_1d(g)[0])
    return ((w[:, 0] - Omega) ** 2 + a[:, 0] ** 2) * rho**2 - f**2


def _periodic_grid(Omega, factor, n_per):
    T = 2 * np.pi / Omega * factor
    return np.arange(n_per * factor) * (T / (n_per * factor))


def reconstruct_nf(rom: SSMRom, Z, t, bundle: ForcedBundle | None, h1: bool = True):
    """Physical states from normal-form coordinates along times ``t``.

    ``h1`` adds the removed non-resonant forcing harmonics; it is off for
    trajectories integrated with the full pulled-back forcing.
    """
    nf = rom.nf
    Zeta = nf.zeta_from_z(Z)
    if h1 and bundle is not None and bundle.nff is not None:
        Zeta = Zeta + bundle.nff.h1_at(t)
    Y = Zeta @ nf.P.T
    if nf.real_chart:
        Y = Y.real
    X = rom.reconstruct(Y)
    if bundle is not None:
        X = X + bundle.corr.at(t)
    return X, Y


def evaluate_branch(branch: FRCBranch, rom: SSMRom, bundle_for, observables=None, n_per: int = 128):
    """Attach amplitude/phase of each observable to the branch samples.

    ``bundle_for(Omega)`` returns the :class:`ForcedBundle` at that
    frequency (forcing amplitude already scaled). ``observables`` maps
    names to functions of the state array; the first one fills
    ``branch.amp``/``branch.phase``.
    """
    if observables is None:
        observables = {"s": rom.observable}
    res = {k: np.zeros(len(branch)) for k in observables}
    ph = {k: np.zeros(len(branch)) for k in observables}
    for i, (Om, Wi) in enumerate(zip(branch.Omega, branch.W)):
        bundle = bundle_for(Om)
        t = _periodic_grid(Om, branch.period_factor, n_per)
        Z = Wi[None, :] * np.exp(1j * np.outer(t, branch.eta) * Om)
        X, _ = reconstruct_nf(rom, Z, t, bundle)
        for k, fn in observables.items():
            res[k][i], ph[k][i] = amp_phase(fn(X), t, Om)
    first = next(iter(observables))
    branch.amp, branch.phase = res[first], ph[first]
    for k in observables:
        if k != first:
            branch.extra[f"amp_{k}"] = res[k]
            branch.extra[f"phase_{k}"] = ph[k]
    return branch


@dataclass
class BackboneCurve:
    rho: np.ndarray
    omega: np.ndarray
    alpha: np.ndarray
    amp: np.ndarray

    def table(self):
        return {"rho": self.rho, "omega": self.omega, "omega_Hz": self.omega / (2 * np.pi),
                "alpha": self.alpha, "amp": self.amp}


def backbone(rom: SSMRom, rho, n_theta: int = 256, observable=None) -> BackboneCurve:
    """Frequency, damping and amplitude along the normal-form radius (``m = 1``)."""
    nf = rom.nf
    if nf is None:
        raise ValueError("backbone needs a normal form")
    if nf.m != 1:
        raise SSMError("backbone curves are defined for two-dimensional SSMs only")
    rho = np.asarray(rho, dtype=float)
    obs = rom.observable if observable is None else observable
    a, w = nf.alpha_omega(rho[:, None])
    th = np.arange(n_theta) * (2 * np.pi / n_theta)
    amp = np.zeros(len(rho))
    for i, r in enumerate(rho):
        if r == 0:
            continue
        X, _ = reconstruct_nf(rom, (r * np.exp(1j * th))[:, None], th, None)
        amp[i] = amp_phase(obs(X), th, 1.0)[0]
    return BackboneCurve(rho, w[:, 0], a[:, 0], amp)


def simulate_rom(
    rom: SSMRom,
    bundle: ForcedBundle | None,
    t_eval,
    y0=None,
    z0=None,
    x0=None,
    route: str = "nf",
    tol: float = 1e-9,
    blowup: float = 10.0,
) -> Trajectory:
    """Integrate the reduced (``route='r'``) or normal-form dynamics and reconstruct ``x``."""
    t_eval = np.asarray(t_eval, dtype=float)
    t0, t1 = float(t_eval[0]), float(t_eval[-1])
    if route == "nf" and rom.nf is None:
        raise ValueError("no normal form in this ROM")
    if x0 is not None:
        y0 = rom.project(x0)[0]
    if route == "r":
        if y0 is None:
            y0 = np.zeros(2 * rom.m)
        u0 = to_real(np.asarray(y0)[None, :], rom.complex_coords)[0]
        rhs = rom.real_field(None if bundle is None else bundle.rf)
        limit = blowup * rom.a_max

        def norm_state(u):
            return np.linalg.norm(from_real(u, rom.complex_coords))
    else:
        nf = rom.nf
        m = nf.m
        if z0 is None:
            if y0 is None:
                z0 = np.zeros(m, dtype=complex)
            else:
                z0 = nf.z_from_zeta(np.atleast_2d(y0) @ nf.Pinv.T)[0]
        z0 = np.asarray(z0, dtype=complex)
        u0 = np.concatenate([z0.real, z0.imag])
        nff = None if bundle is None or bundle.nff is None else bundle.nff

        def rhs(t, u):
            Z = (u[:m] + 1j * u[m:])[None, :]
            dZ = nf.field(Z)[0]
            if nff is not None:
                # forcing pulled back through the inverse coordinate change
                dZ = dZ + nf.forcing_gain(Z)[0] @ nff.G_at(t)
            return np.concatenate([dZ.real, dZ.imag])

        limit = blowup * rom.z_max

        def norm_state(u):
            return np.linalg.norm(u)

    def ev(t, u):
        return limit - norm_state(u)

    ev.terminal = True
    if np.isfinite(limit) and ev(t0, u0) < 0:
        raise DivergenceError(f"initial state lies beyond {blowup:g} x the training range")
    scale = max(np.abs(u0).max(initial=0.0), 1e-6 * (rom.a_max if np.isfinite(rom.a_max) else 1.0))
    sol = solve_ivp(rhs, (t0, t1), u0, method="DOP853", t_eval=t_eval, rtol=tol, atol=tol * scale,
                    events=ev if np.isfinite(limit) else None)
    if sol.status == 1 or len(sol.t) < len(t_eval):
        raise DivergenceError(f"reduced trajectory left {blowup:g} x the training range at t={sol.t[-1]:.6g}")
    if sol.status < 0:
        raise DivergenceError(f"reduced integration failed: {sol.message}")
    U = sol.y.T
    if route == "r":
        Y = from_real(U, rom.complex_coords)
        X = rom.reconstruct(Y)
        if bundle is not None:
            X = X + bundle.corr.at(t_eval)
    else:
        Z = U[:, :m] + 1j * U[:, m:]
        X, Y = reconstruct_nf(rom, Z, t_eval, bundle, h1=False)
    traj = Trajectory(t_eval, X, label=f"rom-{route}")
    traj.meta["y"] = Y
    return traj


def linear_frf(model: MechModel, f0, Omega):
    """Steady-state displacement amplitudes of ``M q'' + C q' + K q = f0 cos(Omega t)``."""
    Omega = np.atleast_1d(Omega)
    out = np.empty((len(Omega), model.n), dtype=complex)
    for i, w in enumerate(Omega):
        out[i] = np.linalg.solve(model.K - w**2 * model.M + 1j * w * model.C, f0)
    return out


def direct_steady_state(model: MechModel, forcing: ForcingSpec, x0, cycles: int = 50, n_per: int = 128,
                        tol: float = 1e-10, observables=None):
    """Integrate the full model ``cycles`` forcing periods; amp/phase over the last one."""
    from .simulate import integrate

    Om = float(forcing.Omega[0])
    T = 2 * np.pi / Om
    t_last = (cycles - 1) * T + np.arange(n_per) * (T / n_per)
    t_eval = np.concatenate([[0.0], t_last])
    traj = integrate(model, forcing, x0, (0.0, cycles * T), tol=tol, t_eval=t_eval)
    X = traj.states[1:]
    if observables is None:
        observables = {"s": model.observable}
    out = {k: amp_phase(fn(X), t_last, Om) for k, fn in observables.items()}
    return out, X
