"""Spectra of the first-order operator and linear chart construction.

Eigenvalues are stored as complex-conjugate pairs ``lam`` (positive
imaginary part), ordered by non-increasing real part. Full bases are
arranged ``[v_1 .. v_p, conj(v_1) .. conj(v_p)]``.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from math import gcd
from typing import NamedTuple, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ChartError, ModelError, SpectrumError
from .io import decode_complex, encode_complex
from .model import MechModel

log = logging.getLogger(__name__)

__all__ = [
    "first_order_operator",
    "Spectrum",
    "compute_spectrum",
    "spectral_gap",
    "Resonance",
    "detect_internal_resonance",
    "ChartBasis",
    "build_chart",
    "dof_selector",
    "outer_resonances",
    "STYLES",
]

STYLES = ("modal-complex", "modal-mechanical", "non-modal")
DENSE_LIMIT = 600


def first_order_operator(model: MechModel) -> np.ndarray:
    """``A = [[0, I], [-M^-1 K, -M^-1 C]]``."""
    n = model.n
    try:
        Mi = model.Minv
    except Exception as exc:  # pragma: no cover - MechModel already checks
        raise ModelError("singular mass matrix") from exc
    A = np.zeros((2 * n, 2 * n))
    A[:n, n:] = np.eye(n)
    A[n:, :n] = -Mi @ model.K
    A[n:, n:] = -Mi @ model.C
    return A


def _rayleigh_fit(model: MechModel):
    """Least-squares ``C ~ alpha M + beta K``; returns (alpha, beta) or None."""
    if model.damping is not None:
        return model.damping
    G = np.column_stack([model.M.ravel(), model.K.ravel()])
    coef, *_ = np.linalg.lstsq(G, model.C.ravel(), rcond=None)
    resid = np.linalg.norm(model.C.ravel() - G @ coef)
    cn = np.linalg.norm(model.C)
    if cn == 0.0 or resid <= 1e-8 * cn:
        return float(coef[0]), float(coef[1])
    return None


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Kept oscillatory pairs of ``A`` with bi-orthonormal bases.

    ``W @ V = I`` and ``W @ conj(V) = 0``. ``omega0``/``U0`` are filled
    when damping is proportional.
    """

    A: np.ndarray
    lam: np.ndarray
    V: np.ndarray
    W: np.ndarray
    omega0: np.ndarray | None = None
    U0: np.ndarray | None = None
    damping: tuple[float, float] | None = None
    M: np.ndarray | None = None

    @property
    def n(self):
        return self.A.shape[0] // 2

    @property
    def count(self):
        return len(self.lam)

    @property
    def frequencies(self):
        return self.lam.imag

    @property
    def damping_ratios(self):
        return -self.lam.real / np.abs(self.lam)

    @property
    def proportional(self):
        return self.damping is not None

    def full(self, idx=None):
        """Eigenvalues and bases for pairs ``idx`` in conjugate-pair order."""
        idx = np.arange(self.count) if idx is None else np.asarray(idx, dtype=int)
        lam = np.concatenate([self.lam[idx], np.conj(self.lam[idx])])
        V = np.hstack([self.V[:, idx], np.conj(self.V[:, idx])])
        W = np.vstack([self.W[idx], np.conj(self.W[idx])])
        return lam, V, W

    def biorthogonality_error(self):
        _, V, W = self.full()
        return np.abs(W @ V - np.eye(V.shape[1])).max()

    def eigen_residual(self):
        """``max_j |A v_j - lam_j v_j| / |A|`` over kept pairs."""
        R = self.A @ self.V - self.V * self.lam
        return np.linalg.norm(R, axis=0).max() / np.linalg.norm(self.A, 2)


def _normalize_right(v):
    i = np.argmax(np.abs(v))
    v = v * (np.abs(v[i]) / v[i])
    return v / np.linalg.norm(v)


def _proportional_pairs(model, omega0, U0, alpha, beta):
    c = alpha + beta * omega0**2
    disc = omega0**2 - (c / 2) ** 2
    if np.any(disc <= 0):
        j = int(np.argmax(disc <= 0))
        raise SpectrumError(f"mode {j} is not oscillatory (overdamped or critically damped)")
    lam = -c / 2 + 1j * np.sqrt(disc)
    n = model.n
    V = np.vstack([U0, U0 * lam]).astype(complex)
    W = np.hstack([(U0.T @ model.M) * (lam + c)[:, None], U0.T @ model.M]) / (2 * lam + c)[:, None]
    return lam, V, W


def compute_spectrum(model: MechModel, m_keep: int | None = None, dense: bool | None = None) -> Spectrum:
    """Keep the ``m_keep`` slowest complex pairs (all of them by default).

    Raises :class:`SpectrumError` when a real eigenvalue or an eigenvalue
    with non-negative real part falls among the kept ones.
    """
    n = model.n
    m_keep = n if m_keep is None else int(m_keep)
    if not 1 <= m_keep <= n:
        raise ValueError(f"m_keep must lie in [1, {n}]")
    A = first_order_operator(model)
    ab = _rayleigh_fit(model)
    dense = (2 * n < DENSE_LIMIT) if dense is None else dense
    omega0 = U0 = None
    if ab is not None:
        # closed-form pairs from the conservative modes
        w_all, U_all = model.conservative_modes() if dense else _sparse_modes(model, m_keep)
        c_all = ab[0] + ab[1] * w_all**2
        if np.any(c_all <= 0):
            j = int(np.argmax(c_all <= 0))
            raise SpectrumError(f"eigenvalue pair {j} has non-negative real part (undamped mode)")
        order = np.lexsort((w_all, c_all))  # non-increasing real part, ties by frequency
        sel = order[:m_keep]
        omega0, U0 = w_all[sel], U_all[:, sel]
        lam, V, W = _proportional_pairs(model, omega0, U0, *ab)
    elif dense:
        ev, vl, vr = sla.eig(A, left=True, right=True)
        order = np.lexsort((np.abs(ev.imag), -ev.real))
        ev, vl, vr = ev[order], vl[:, order], vr[:, order]
        head = ev[: 2 * m_keep]
        scale = np.abs(ev).max()
        for j, e in enumerate(head):
            if e.real >= 0:
                raise SpectrumError(f"eigenvalue {j} = {e:.6g} has non-negative real part")
            if abs(e.imag) <= 1e-10 * scale:
                raise SpectrumError(f"eigenvalue {j} = {e:.6g} is real (overdamped mode)")
        pos = np.flatnonzero(head.imag > 0)
        lam = head[pos]
        V = np.column_stack([_normalize_right(vr[:, k]) for k in pos])
        Wl = np.conj(vl[:, pos]).T
        W = Wl / np.sum(Wl * V.T, axis=1)[:, None]
        # re-project against all kept eigenvectors for tight bi-orthonormality
        Vf = np.hstack([V, np.conj(V)])
        Wf = np.linalg.solve(Vf.conj().T @ Vf, Vf.conj().T)
        W = Wf[: len(lam)]
        if len(lam) != m_keep:
            raise SpectrumError("slowest eigenvalues do not form complete conjugate pairs")
    else:
        lam, V, W = _sparse_general(A, m_keep)
    M = np.array(model.M)
    return Spectrum(A, lam, V, W, omega0, U0, ab, M)


def _sparse_modes(model, m_keep):
    k = min(model.n - 1, m_keep)
    w2, U = spla.eigsh(sp.csr_matrix(model.K), k=k, M=sp.csr_matrix(model.M), sigma=0.0)
    order = np.argsort(w2)
    w = np.sqrt(np.clip(w2[order], 0, None))
    U = U[:, order]
    U = U / np.sqrt(np.einsum("ij,ij->j", U, model.M @ U))
    pivot = np.argmax(np.abs(U), axis=0)
    U = U * np.sign(U[pivot, np.arange(U.shape[1])])
    return w, U


def _sparse_general(A, m_keep):
    """Shift-invert around the origin for non-proportional large models."""
    As = sp.csr_matrix(A)
    ev, vr = spla.eigs(As, k=2 * m_keep, sigma=0.0)
    evl, vl = spla.eigs(As.T.conj(), k=2 * m_keep, sigma=0.0)
    pos = np.flatnonzero(ev.imag > 0)
    if len(pos) < m_keep:
        raise SpectrumError("too few oscillatory pairs near the origin")
    pos = pos[np.argsort(-ev[pos].real)][:m_keep]
    lam = ev[pos]
    V = np.column_stack([_normalize_right(vr[:, k]) for k in pos])
    Wl = []
    for e in lam:
        k = np.argmin(np.abs(np.conj(evl) - e))
        Wl.append(np.conj(vl[:, k]))
    Wl = np.array(Wl)
    W = Wl / np.sum(Wl * V.T, axis=1)[:, None]
    return lam, V, W


def spectral_gap(spectrum: Spectrum, m: int) -> float:
    """``Re(lam_{m+1}) / Re(lam_m)`` with 1-based pair index ``m``."""
    if not 1 <= m < spectrum.count:
        raise ValueError("m must be smaller than the number of kept pairs")
    return float(spectrum.lam[m].real / spectrum.lam[m - 1].real)


class Resonance(NamedTuple):
    modes: tuple[int, int]
    ratio: tuple[int, int]
    detuning: float


def detect_internal_resonance(spectrum, max_order: int = 5, rel_tol: float = 0.02) -> list[Resonance]:
    """Mode pairs ``(i, j)`` with ``q w_i ~ p w_j`` (``w_i <= w_j``, ``p + q <= max_order``).

    ``spectrum`` may be a :class:`Spectrum` or an array of frequencies. The
    detuning is ``|q w_i - p w_j| / w_j``; results are sorted by detuning.
    """
    if max_order > 10:
        raise ValueError("max_order must be <= 10")
    w = np.asarray(spectrum.frequencies if isinstance(spectrum, Spectrum) else spectrum, dtype=float)
    hits = []
    for i, j in itertools.combinations(range(len(w)), 2):
        a, b = (i, j) if w[i] <= w[j] else (j, i)
        best = None
        for p in range(1, max_order):
            for q in range(p, max_order - p + 1):
                if gcd(p, q) != 1:
                    continue
                det = abs(q * w[a] - p * w[b]) / w[b]
                if det <= rel_tol and (best is None or det < best.detuning):
                    best = Resonance((a, b), (p, q), float(det))
        if best is not None:
            hits.append(best)
    return sorted(hits, key=lambda r: r.detuning)


def outer_resonances(lam_in, lam_out, order: int = 3, rel_tol: float = 0.02):
    """Integer combinations of chart eigenvalues hitting outer eigenvalues.

    Tests ``|Im(<e, lam_in>) - Im(lam_out)| <= rel_tol |lam_out|`` for
    nonnegative ``e`` with ``2 <= |e| <= order``; returns ``(e, j)`` pairs.
    """
    lam_in = np.asarray(lam_in)
    found = []
    d = len(lam_in)
    for deg in range(2, order + 1):
        for combo in itertools.combinations_with_replacement(range(d), deg):
            e = np.bincount(combo, minlength=d)
            s = e @ lam_in
            for j, lo in enumerate(lam_out):
                if abs(s.imag - lo.imag) <= rel_tol * abs(lo):
                    found.append((tuple(int(v) for v in e), j))
    return found


@dataclass(frozen=True, eq=False)
class ChartBasis:
    """Linear parts of a graph-style chart/parametrization.

    ``W0 @ V0 = I``, ``A @ V0 = V0 @ R0``, ``R0 = P diag(lam) P^-1`` and
    ``V0 = V_E P^-1`` with ``V_E`` the chart eigenvectors.
    """

    mode_indices: tuple[int, ...]
    W0: np.ndarray
    V0: np.ndarray
    R0: np.ndarray
    P: np.ndarray
    lam: np.ndarray
    style: str
    mechanical: bool = False
    outer: list = field(default_factory=list)

    @property
    def m(self):
        return len(self.mode_indices)

    @property
    def complex_coords(self):
        return np.iscomplexobj(self.W0)

    @property
    def modal(self):
        return self.style != "non-modal"

    @property
    def Pinv(self):
        return np.linalg.inv(self.P)

    @property
    def frequencies(self):
        return self.lam[: self.m].imag

    def residuals(self, A):
        """Invariant residuals ``(|W0 V0 - I|, |A V0 - V0 R0|/|A|, |W0 A - R0 W0|/|A|)``."""
        nA = np.linalg.norm(A, 2)
        e1 = np.abs(self.W0 @ self.V0 - np.eye(2 * self.m)).max()
        e2 = np.linalg.norm(A @ self.V0 - self.V0 @ self.R0, 2) / nA
        e3 = np.linalg.norm(self.W0 @ A - self.R0 @ self.W0, 2) / nA
        return e1, e2, e3

    def to_dict(self):
        return {
            "mode_indices": list(self.mode_indices),
            "style": self.style,
            "mechanical": self.mechanical,
            "W0": encode_complex(self.W0),
            "V0": encode_complex(self.V0),
            "R0": encode_complex(self.R0),
            "P": encode_complex(self.P),
            "lam": encode_complex(self.lam),
            "complex_coords": self.complex_coords,
        }

    @classmethod
    def from_dict(cls, d):
        conv = decode_complex if d.get("complex_coords", True) else (lambda x: decode_complex(x).real)
        return cls(
            tuple(d["mode_indices"]),
            conv(d["W0"]),
            conv(d["V0"]),
            conv(d["R0"]),
            decode_complex(d["P"]),
            decode_complex(d["lam"]),
            d["style"],
            bool(d.get("mechanical", False)),
        )


def dof_selector(n: int, dofs: Sequence[int]) -> np.ndarray:
    """Chart projecting on displacement and velocity of the given DOFs."""
    m = len(dofs)
    W0 = np.zeros((2 * m, 2 * n))
    for r, k in enumerate(dofs):
        W0[r, k] = 1.0
        W0[m + r, n + k] = 1.0
    return W0


def _is_mechanical_selector(W0, n):
    m = W0.shape[0] // 2
    S = W0[:m, :n]
    return (
        np.allclose(W0[:m, n:], 0)
        and np.allclose(W0[m:, :n], 0)
        and np.allclose(W0[m:, n:], S)
    )


def _realify(a, tol=1e-11):
    if np.abs(a.imag).max(initial=0.0) <= tol * max(1.0, np.abs(a).max()):
        return np.ascontiguousarray(a.real)
    return a


def build_chart(
    spectrum: Spectrum,
    mode_indices: Sequence[int],
    style: str = "modal-complex",
    W0=None,
    check_order: int = 3,
    check_tol: float = 0.02,
    max_condition: float = 1e8,
) -> ChartBasis:
    """Chart for the spectral subspace of the given (0-based) pairs."""
    if style not in STYLES:
        raise ValueError(f"unknown chart style {style!r}")
    idx = tuple(int(i) for i in mode_indices)
    if len(set(idx)) != len(idx) or min(idx) < 0 or max(idx) >= spectrum.count:
        raise ValueError("invalid mode indices")
    m = len(idx)
    n = spectrum.n
    lam, VE, WE = spectrum.full(list(idx))
    outer_idx = [j for j in range(spectrum.count) if j not in idx]
    lam_out = np.concatenate([spectrum.lam[outer_idx], np.conj(spectrum.lam[outer_idx])])
    outer = outer_resonances(lam, lam_out, check_order, check_tol) if outer_idx else []
    if outer:
        log.warning("chart %s: %d outer near-resonances up to order %d", idx, len(outer), check_order)
    mechanical = False
    if style == "modal-complex":
        P = np.eye(2 * m, dtype=complex)
        W0c, V0, R0 = WE, VE, np.diag(lam)
    elif style == "modal-mechanical":
        if not spectrum.proportional:
            raise ChartError("modal-mechanical charts require proportional damping")
        alpha, beta = spectrum.damping
        U0 = spectrum.U0[:, list(idx)]
        w0 = spectrum.omega0[list(idx)]
        UM = U0.T @ spectrum.M
        Z = np.zeros((m, n))
        W0c = np.block([[UM, Z], [Z, UM]])
        V0 = np.block([[U0, np.zeros((n, m))], [np.zeros((n, m)), U0]])
        R0 = np.block([[np.zeros((m, m)), np.eye(m)], [-np.diag(w0**2), -np.diag(alpha + beta * w0**2)]])
        P = W0c @ VE
        mechanical = True
    else:
        if W0 is None:
            raise ChartError("non-modal chart requires an explicit projection W0")
        W0c = np.asarray(W0)
        if W0c.shape != (2 * m, 2 * n):
            raise ChartError(f"W0 must be {2 * m}x{2 * n}")
        P = W0c @ VE
        # scale-aware: a chart blind to the subspace has tiny P even if P is well conditioned
        smin = np.linalg.svd(P, compute_uv=False)[-1]
        scale = np.linalg.norm(W0c, 2) * np.linalg.norm(VE, 2)
        cond = max(np.linalg.cond(P), scale / smin) if smin > 0 else np.inf
        if not np.isfinite(cond) or cond > max_condition:
            raise ChartError(f"chart is degenerate: cond(W0 V_E) = {cond:.3e}")
        Pinv = np.linalg.inv(P)
        V0 = _realify(VE @ Pinv)
        R0 = _realify(P @ np.diag(lam) @ Pinv)
        mechanical = bool(np.isrealobj(W0c) and _is_mechanical_selector(W0c, n))
    return ChartBasis(idx, W0c, V0, R0, P, lam, style, mechanical, outer)
