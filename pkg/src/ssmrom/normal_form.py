"""Extended normal forms identified from reduced data.

Coordinates: ``zeta = P^-1 y`` diagonalizes the linear part. The normal
form ``z`` satisfies ``z = zeta + hinv_nl(zeta)`` and ``zeta = z + h_nl(z)``,
with ``dz/dt = Lambda z + n_nl(z)``. Only the first ``m`` rows are stored;
the remaining rows are their complex conjugates.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from .errors import ConvergenceError
from .io import decode_complex, encode_complex
from .manifold import lstsq_qr
from .polymap import PolyMap, monomial_exponents
from .spectral import ChartBasis

log = logging.getLogger(__name__)

__all__ = [
    "ResonanceStructure",
    "select_resonant_terms",
    "NormalFormModel",
    "fit_normal_form",
    "invert_consistency",
    "conjugate_exponent",
]


def conjugate_exponent(e, m):
    e = np.asarray(e)
    return np.concatenate([e[..., m:], e[..., :m]], axis=-1)


@dataclass(frozen=True)
class ResonanceStructure:
    """Resonant exponent tables ``terms[k]`` (rows over the 2m variables)."""

    terms: tuple
    order: int
    lam: np.ndarray

    @property
    def m(self):
        return len(self.terms)

    def contains(self, k, e):
        return any(np.array_equal(row, e) for row in self.terms[k])

    def to_dict(self):
        return {"terms": [t.tolist() for t in self.terms], "order": self.order, "lam": encode_complex(self.lam)}

    @classmethod
    def from_dict(cls, d):
        m = len(d["terms"])
        lam = decode_complex(d["lam"])
        terms = tuple(np.asarray(t, dtype=int).reshape(-1, 2 * m) for t in d["terms"])
        return cls(terms, int(d["order"]), lam)


def select_resonant_terms(lam, order: int, tol_rel: float = 0.05, tol_abs: float = 2.0) -> ResonanceStructure:
    """Near-resonant monomials for each normal-form coordinate.

    ``lam`` holds the 2m chart eigenvalues in conjugate-pair order. A
    tuple ``e`` (degree 2..order) is kept for coordinate ``k`` when
    ``|Im(<e, lam> - lam_k)| <= tol_rel |Im lam_k| + tol_abs |Re lam_k|``.
    """
    lam = np.asarray(lam, dtype=complex)
    if len(lam) % 2:
        raise ValueError("eigenvalues must come in conjugate pairs")
    m = len(lam) // 2
    exps = monomial_exponents(2 * m, 2, order)
    s = exps @ lam
    terms = []
    for k in range(m):
        thr = tol_rel * abs(lam[k].imag) + tol_abs * abs(lam[k].real)
        terms.append(exps[np.abs((s - lam[k]).imag) <= thr])
    return ResonanceStructure(tuple(terms), int(order), lam)


def _union(tables, d):
    rows = sorted({tuple(r) for t in tables for r in t}, key=lambda r: (sum(r), tuple(-v for v in r)))
    return np.array(rows, dtype=int).reshape(-1, d)


class NormalFormModel:
    """Identified normal form with its coordinate changes."""

    def __init__(self, lam, P, structure: ResonanceStructure, ncoef, hinv: PolyMap, h: PolyMap,
                 real_chart: bool = False, residual: float = float("nan"), provenance=None):
        self.lam = np.asarray(lam, dtype=complex)
        self.P = np.asarray(P, dtype=complex)
        self.Pinv = np.linalg.inv(self.P)
        self.structure = structure
        self.ncoef = tuple(np.asarray(c, dtype=complex) for c in ncoef)
        self.hinv = hinv
        self.h = h
        self.real_chart = bool(real_chart)
        self.residual = residual
        self.provenance = dict(provenance or {})
        m = self.m
        ex = _union(structure.terms, 2 * m)
        C = np.zeros((m, len(ex)), dtype=complex)
        index = {tuple(r): i for i, r in enumerate(ex)}
        for k in range(m):
            for e, c in zip(structure.terms[k], self.ncoef[k]):
                C[k, index[tuple(e)]] = c
        self.n_map = PolyMap(ex, C, conjugate_pairs=True) if len(ex) else None

    @property
    def m(self):
        return len(self.lam) // 2

    @property
    def Lam(self):
        return self.lam[: self.m]

    def full(self, Z):
        Z = np.atleast_2d(Z)
        return np.hstack([Z, np.conj(Z)])

    def n_nl(self, Zf):
        if self.n_map is None:
            return np.zeros((Zf.shape[0], self.m), dtype=complex)
        return self.n_map(Zf)

    def field(self, Z):
        """Autonomous normal-form velocity for ``Z`` of shape ``(P, m)``."""
        Z = np.atleast_2d(Z)
        return self.Lam * Z + self.n_nl(self.full(Z))

    def field_jacobian(self, Z):
        """``(d zdot/d z, d zdot/d conj z)``, each of shape ``(P, m, m)``."""
        Z = np.atleast_2d(Z)
        m = self.m
        if self.n_map is None:
            J = np.zeros((Z.shape[0], m, 2 * m), dtype=complex)
        else:
            J = self.n_map.jacobian(self.full(Z))
        Jz = J[:, :, :m] + np.diag(self.Lam)
        return Jz, J[:, :, m:]

    def zeta_from_z(self, Z):
        Zf = self.full(Z)
        zh = Zf[:, : self.m] + self.h(Zf)
        return self.full(zh)

    def z_from_zeta(self, Zeta):
        Zeta = np.atleast_2d(Zeta)
        return Zeta[:, : self.m] + self.hinv(Zeta)

    def forcing_gain(self, Z):
        """``dz/dzeta`` at ``zeta = h(z)``, shape ``(P, m, 2m)``.

        Maps an additive forcing of the diagonal coordinates into ``dz/dt``.
        """
        Zeta = self.zeta_from_z(Z)
        m = self.m
        J = self.hinv.jacobian(Zeta, nonlinear_only=True)
        J = np.array(J, dtype=complex)
        J[:, :, :m] += np.eye(m)
        return J

    def y_from_z(self, Z):
        Y = self.zeta_from_z(Z) @ self.P.T
        return Y.real if self.real_chart else Y

    def z_from_y(self, Y):
        return self.z_from_zeta(np.atleast_2d(Y) @ self.Pinv.T)

    def polar_terms(self):
        """Per coordinate ``[(coef, rho_exponents, phase_vector), ...]`` of ``zdot_k e^{-i theta_k} / rho_k``.

        The linear eigenvalue is the first entry of every list.
        """
        m = self.m
        out = []
        for k in range(m):
            unit = np.eye(m, dtype=int)[k]
            rows = [(self.Lam[k], np.zeros(m, dtype=int), np.zeros(m, dtype=int))]
            for e, c in zip(self.structure.terms[k], self.ncoef[k]):
                p, q = e[:m], e[m:]
                rows.append((complex(c), p + q - unit, p - q - unit))
            out.append(rows)
        return out

    def phase_classes(self, tol=0.0):
        """Nonzero phase vectors appearing in the polar tables (coefficients above ``tol``)."""
        found = set()
        for rows in self.polar_terms():
            for c, _, ph in rows:
                if np.any(ph) and abs(c) > tol:
                    found.add(tuple(int(v) for v in ph))
        return found

    def alpha_omega(self, rho, theta=None):
        """``alpha_k(rho, theta)`` and ``omega_k(rho, theta)`` for rho of shape ``(P, m)``."""
        rho = np.atleast_2d(np.asarray(rho, dtype=float))
        theta = np.zeros_like(rho) if theta is None else np.atleast_2d(np.asarray(theta, dtype=float))
        val = np.zeros(rho.shape, dtype=complex)
        for k, rows in enumerate(self.polar_terms()):
            for c, re, ph in rows:
                with np.errstate(divide="ignore", invalid="ignore"):
                    mag = np.prod(rho ** re, axis=1)
                val[:, k] += c * mag * np.exp(1j * theta @ ph)
        return -val.real, val.imag

    def scaled_coefficients(self):
        """Normal-form coefficients as ``{(k, exponent): value}``."""
        return {(k, tuple(int(v) for v in e)): complex(c)
                for k in range(self.m) for e, c in zip(self.structure.terms[k], self.ncoef[k])}

    @classmethod
    def from_polar_series(cls, rho_dot, omega):
        """Single-mode model from ``rho_dot = sum a_j rho^j`` and ``theta_dot = sum b_j rho^j``.

        ``rho_dot[j]``/``omega[j]`` are the coefficients of ``rho**j``; the
        series must be odd (resp. even) in ``rho``.
        """
        a = np.asarray(rho_dot, dtype=float)
        b = np.asarray(omega, dtype=float)
        if np.any(a[0::2]) or np.any(b[1::2]):
            raise ValueError("rho_dot must be odd and omega even in rho")
        lam0 = complex(a[1] if len(a) > 1 else 0.0, b[0])
        nmax = max((len(a) - 2) // 2, (len(b) - 1) // 2)
        exps, coefs = [], []
        for p in range(1, nmax + 1):
            ca = a[2 * p + 1] if 2 * p + 1 < len(a) else 0.0
            cb = b[2 * p] if 2 * p < len(b) else 0.0
            exps.append([p + 1, p])
            coefs.append(ca + 1j * cb)
        order = 2 * nmax + 1
        lam = np.array([lam0, np.conj(lam0)])
        st = ResonanceStructure((np.array(exps, dtype=int).reshape(-1, 2),), order, lam)
        empty = PolyMap(np.zeros((0, 2), dtype=int), np.zeros((1, 0), dtype=complex))
        return cls(lam, np.eye(2), st, (np.array(coefs),), empty, empty)

    def to_dict(self):
        return {
            "lam": encode_complex(self.lam),
            "P": encode_complex(self.P),
            "structure": self.structure.to_dict(),
            "ncoef": [encode_complex(c) for c in self.ncoef],
            "hinv": self.hinv.to_dict(),
            "h": self.h.to_dict(),
            "real_chart": self.real_chart,
            "residual": self.residual,
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            decode_complex(d["lam"]),
            decode_complex(d["P"]),
            ResonanceStructure.from_dict(d["structure"]),
            [decode_complex(c) if len(c) else np.zeros(0, dtype=complex) for c in d["ncoef"]],
            PolyMap.from_dict(d["hinv"]),
            PolyMap.from_dict(d["h"]),
            d.get("real_chart", False),
            d.get("residual", float("nan")),
            d.get("provenance"),
        )


class _ConjugacyProblem:
    """Residual and Jacobian of the conjugacy error in scaled coordinates."""

    def __init__(self, zeta, zeta_dot, lam, structure, order):
        m = len(lam) // 2
        self.m = m
        self.lam = lam
        self.zeta, self.zeta_dot = zeta, zeta_dot
        exps = monomial_exponents(2 * m, 2, order)
        self.h_exps = []
        for k in range(m):
            res = {tuple(r) for r in structure.terms[k]}
            self.h_exps.append(np.array([e for e in exps if tuple(e) not in res], dtype=int).reshape(-1, 2 * m))
        self.n_exps = list(structure.terms)
        self.phi, self.dphi = [], []
        for k in range(m):
            pm = PolyMap(self.h_exps[k], np.zeros((1, len(self.h_exps[k]))))
            if len(self.h_exps[k]):
                self.phi.append(pm.features(zeta))
                D = pm.derivative_features(zeta)
                self.dphi.append(np.einsum("pad,pd->pa", D, zeta_dot))
            else:
                self.phi.append(np.zeros((len(zeta), 0)))
                self.dphi.append(np.zeros((len(zeta), 0)))
        self.n_pm = [PolyMap(e, np.zeros((1, len(e)), dtype=complex)) for e in self.n_exps]
        self.sizes_h = [len(e) for e in self.h_exps]
        self.sizes_n = [len(e) for e in self.n_exps]
        self.n_params = 2 * (sum(self.sizes_h) + sum(self.sizes_n))

    def unpack(self, p):
        nc = len(p) // 2
        c = p[:nc] + 1j * p[nc:]
        H, N, i = [], [], 0
        for s in self.sizes_h:
            H.append(c[i : i + s])
            i += s
        for s in self.sizes_n:
            N.append(c[i : i + s])
            i += s
        return H, N

    def pack(self, H, N):
        c = np.concatenate(list(H) + list(N)) if (H or N) else np.zeros(0, dtype=complex)
        return np.concatenate([c.real, c.imag])

    def z_of(self, H):
        Z = np.stack([self.zeta[:, k] + self.phi[k] @ H[k] for k in range(self.m)], axis=1)
        return np.hstack([Z, np.conj(Z)])

    def residual_complex(self, p):
        H, N = self.unpack(p)
        Zf = self.z_of(H)
        cols = []
        for k in range(self.m):
            lhs = self.zeta_dot[:, k] + self.dphi[k] @ H[k]
            rhs = self.lam[k] * Zf[:, k]
            if self.sizes_n[k]:
                rhs = rhs + self.n_pm[k].features(Zf) @ N[k]
            cols.append(lhs - rhs)
        return np.concatenate(cols)

    def residual(self, p):
        r = self.residual_complex(p)
        return np.concatenate([r.real, r.imag])

    def jacobian(self, p):
        H, N = self.unpack(p)
        Zf = self.z_of(H)
        m, P = self.m, len(self.zeta)
        ncols = self.n_params // 2
        Jc = np.zeros((m * P, ncols), dtype=complex)  # derivative w.r.t. real parts
        Ji = np.zeros((m * P, ncols), dtype=complex)  # derivative w.r.t. imaginary parts
        # d n_k / d z_l and d n_k / d conj z_l
        G = []
        for k in range(m):
            if self.sizes_n[k]:
                D = self.n_pm[k].derivative_features(Zf)  # (P, n_k, 2m)
                G.append(np.einsum("pad,a->pd", D, N[k]))
            else:
                G.append(np.zeros((P, 2 * m), dtype=complex))
        off = 0
        for l in range(m):
            s = self.sizes_h[l]
            if s == 0:
                continue
            phi = self.phi[l]
            for k in range(m):
                rows = slice(k * P, (k + 1) * P)
                gz = G[k][:, l][:, None]
                gzb = G[k][:, m + l][:, None]
                hol = -gz * phi
                anti = -gzb * np.conj(phi)
                if k == l:
                    hol = hol + self.dphi[l] - self.lam[k] * phi
                Jc[rows, off : off + s] = hol + anti
                Ji[rows, off : off + s] = 1j * hol - 1j * anti
            off += s
        for k in range(m):
            s = self.sizes_n[k]
            if s == 0:
                continue
            rows = slice(k * P, (k + 1) * P)
            F = self.n_pm[k].features(Zf)
            Jc[rows, off : off + s] = -F
            Ji[rows, off : off + s] = -1j * F
            off += s
        J = np.hstack([Jc, Ji])
        return np.vstack([J.real, J.imag])


def _subsample(n, max_samples):
    if max_samples is None or n <= max_samples:
        return np.arange(n)
    return np.unique(np.linspace(0, n - 1, max_samples).round().astype(int))


def fit_normal_form(
    Y,
    Ydot,
    chart: ChartBasis,
    order: int,
    structure: ResonanceStructure | None = None,
    h_order: int | None = None,
    tol_rel: float = 0.05,
    tol_abs: float = 2.0,
    max_samples: int | None = 12000,
    max_nfev: int = 200,
) -> NormalFormModel:
    """Minimize the conjugacy error jointly over ``hinv_nl`` and ``n_nl``.

    Data are rescaled so that ``max |zeta| = 1``; the optimizer is
    Levenberg-Marquardt started from ``n_nl`` fitted with ``z = zeta``.
    ``h_nl`` is obtained afterwards by regressing ``zeta`` on ``z``.
    """
    Y = np.asarray(Y)
    Ydot = np.asarray(Ydot)
    m = chart.m
    lam = chart.lam
    if structure is None:
        structure = select_resonant_terms(lam, order, tol_rel, tol_abs)
    idx = _subsample(len(Y), max_samples)
    Pinv = np.linalg.inv(chart.P)
    zeta = (Y[idx] @ Pinv.T).astype(complex)
    zeta_dot = (Ydot[idx] @ Pinv.T).astype(complex)
    c = float(np.abs(zeta[:, :m]).max(initial=0.0)) or 1.0
    zs, zds = zeta / c, zeta_dot / c
    prob = _ConjugacyProblem(zs, zds, lam, structure, order)

    # initial guess: hinv = identity, n_nl from a linear fit with z = zeta
    H0 = [np.zeros(s, dtype=complex) for s in prob.sizes_h]
    N0 = []
    for k in range(m):
        if prob.sizes_n[k]:
            F = prob.n_pm[k].features(zs)
            Nk, _ = lstsq_qr(F, (zds[:, k] - lam[k] * zs[:, k])[:, None], ridge=0.0 if len(F) > 2 * F.shape[1] else 1e-12)
            N0.append(Nk[:, 0])
        else:
            N0.append(np.zeros(0, dtype=complex))
    p0 = prob.pack(H0, N0)
    history = [float(np.linalg.norm(prob.residual(p0)))]
    if prob.n_params:
        sol = least_squares(prob.residual, p0, jac=prob.jacobian, method="lm", max_nfev=max_nfev,
                            xtol=1e-14, ftol=1e-14, gtol=1e-14)
        history.append(float(np.linalg.norm(sol.fun)))
        p = sol.x
        if not sol.success and sol.status == 0:
            p = _alternating(prob, p, history)
        if not np.all(np.isfinite(p)):
            raise ConvergenceError("normal-form fit diverged", history)
    else:
        p = p0
    H, N = prob.unpack(p)
    resid = float(np.linalg.norm(prob.residual(p)) * c / np.sqrt(len(zs)))

    # undo scaling: degree-d coefficients pick up c^(1-d)
    hinv_coeffs = np.zeros((m, len(monomial_exponents(2 * m, 2, order))), dtype=complex)
    all_exps = monomial_exponents(2 * m, 2, order)
    index = {tuple(e): i for i, e in enumerate(all_exps)}
    for k in range(m):
        for e, v in zip(prob.h_exps[k], H[k]):
            hinv_coeffs[k, index[tuple(e)]] = v * c ** (1 - e.sum())
    ncoef = [N[k] * c ** (1 - structure.terms[k].sum(axis=1)) for k in range(m)]
    hinv = PolyMap(all_exps, hinv_coeffs, conjugate_pairs=True)

    # h by regression of zeta on z (scaled coordinates)
    Zs = prob.z_of(H)
    h_order = order if h_order is None else h_order
    h_exps = monomial_exponents(2 * m, 2, h_order)
    Fh = PolyMap(h_exps, np.zeros((1, len(h_exps)))).features(Zs)
    Ch, _ = lstsq_qr(Fh, zs[:, :m] - Zs[:, :m], ridge=0.0 if len(Fh) > 2 * Fh.shape[1] else 1e-12)
    h = PolyMap(h_exps, Ch.T * c ** (1.0 - h_exps.sum(axis=1)), conjugate_pairs=True)

    dh = np.linalg.det(np.eye(m) + hinv.jacobian(zeta)[:, :, :m]) if len(zeta) else np.ones(1)
    if np.any(np.abs(dh) < 1e-3):
        log.warning("normal-form transformation is nearly singular on the data")
    return NormalFormModel(lam, chart.P, structure, ncoef, hinv, h, not chart.complex_coords, resid,
                           {"samples": int(len(idx)), "scale": c, "history": history})


def _alternating(prob, p, history, sweeps=50):
    """Fallback: alternate linear solves for n_nl (fixed hinv) and hinv (frozen z in n_nl)."""
    for _ in range(sweeps):
        J = prob.jacobian(p)
        r = prob.residual(p)
        step, *_ = np.linalg.lstsq(J, -r, rcond=None)
        p = p + step
        history.append(float(np.linalg.norm(prob.residual(p))))
        if abs(history[-2] - history[-1]) <= 1e-12 * max(history[-2], 1e-300):
            break
    return p


def invert_consistency(model: NormalFormModel, Y) -> float:
    """``max |h(hinv(y)) - y| / |y|`` over nonzero samples."""
    Y = np.atleast_2d(np.asarray(Y))
    nrm = np.linalg.norm(Y, axis=1)
    mask = nrm > 0
    if not np.any(mask):
        return 0.0
    Z = model.z_from_y(Y[mask])
    Yb = model.y_from_z(Z)
    return float((np.linalg.norm(Yb - Y[mask], axis=1) / nrm[mask]).max())
