"""Full-order mechanical models and their external forcing.

A model is ``M q'' + C q' + K q + f_int(q) = eps * f_ext(t)`` with a sparse
polynomial (quadratic and cubic) internal force, so Jacobians are exact.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import ModelError

__all__ = [
    "PolyForce",
    "MechModel",
    "ForcingSpec",
    "build_oscillator_chain",
    "chain_ratio_tuning",
]


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PolyForce:
    """Sparse polynomial force ``f_i(q) = sum_t c_t q_j q_k [q_l]``.

    Quadratic terms are given by ``quad = (rows, idx[T, 2], coef)``, cubic
    terms by ``cubic = (rows, idx[T, 3], coef)``.
    """

    n: int
    quad_rows: np.ndarray = field(default_factory=lambda: np.zeros(0, int))
    quad_idx: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), int))
    quad_coef: np.ndarray = field(default_factory=lambda: np.zeros(0))
    cubic_rows: np.ndarray = field(default_factory=lambda: np.zeros(0, int))
    cubic_idx: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), int))
    cubic_coef: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        for name, dt, shape in [
            ("quad_rows", int, (-1,)),
            ("quad_idx", int, (-1, 2)),
            ("quad_coef", float, (-1,)),
            ("cubic_rows", int, (-1,)),
            ("cubic_idx", int, (-1, 3)),
            ("cubic_coef", float, (-1,)),
        ]:
            arr = np.asarray(getattr(self, name), dtype=dt).reshape(shape)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        for rows, idx in [(self.quad_rows, self.quad_idx), (self.cubic_rows, self.cubic_idx)]:
            if len(rows) != len(idx):
                raise ModelError("term rows and index table lengths differ")
            if rows.size and (rows.min() < 0 or rows.max() >= self.n):
                raise ModelError("nonlinear term row out of range")
            if idx.size and (idx.min() < 0 or idx.max() >= self.n):
                raise ModelError("nonlinear term index out of range")

    @classmethod
    def zero(cls, n):
        return cls(n)

    @property
    def is_zero(self):
        return not (np.any(self.quad_coef) or np.any(self.cubic_coef))

    @cached_property
    def _scatter(self):
        nq, nc = len(self.quad_rows), len(self.cubic_rows)
        sq = sp.csr_matrix((np.ones(nq), (np.arange(nq), self.quad_rows)), shape=(nq, self.n))
        sc = sp.csr_matrix((np.ones(nc), (np.arange(nc), self.cubic_rows)), shape=(nc, self.n))
        return sq, sc

    def __call__(self, q):
        """Evaluate for ``q`` of shape (n,) or (N, n)."""
        q = np.asarray(q)
        single = q.ndim == 1
        Q = np.atleast_2d(q)
        out = np.zeros(Q.shape, dtype=np.result_type(Q, float))
        sq, sc = self._scatter
        if len(self.quad_rows):
            vals = self.quad_coef * Q[:, self.quad_idx[:, 0]] * Q[:, self.quad_idx[:, 1]]
            out += (sq.T @ vals.T).T
        if len(self.cubic_rows):
            i = self.cubic_idx
            vals = self.cubic_coef * Q[:, i[:, 0]] * Q[:, i[:, 1]] * Q[:, i[:, 2]]
            out += (sc.T @ vals.T).T
        return out[0] if single else out

    def jacobian(self, q):
        q = np.asarray(q, dtype=float)
        J = np.zeros((self.n, self.n))
        if len(self.quad_rows):
            a, b = self.quad_idx.T
            c = self.quad_coef
            np.add.at(J, (self.quad_rows, a), c * q[b])
            np.add.at(J, (self.quad_rows, b), c * q[a])
        if len(self.cubic_rows):
            a, b, d = self.cubic_idx.T
            c = self.cubic_coef
            np.add.at(J, (self.cubic_rows, a), c * q[b] * q[d])
            np.add.at(J, (self.cubic_rows, b), c * q[a] * q[d])
            np.add.at(J, (self.cubic_rows, d), c * q[a] * q[b])
        return J

    def potential(self, q):
        """Potential energy, valid when the force is a gradient field.

        Uses Euler's identity for homogeneous polynomials:
        ``U = f2(q).q / 3 + f3(q).q / 4``.
        """
        q = np.asarray(q, dtype=float)
        u = 0.0
        if len(self.quad_rows):
            vals = self.quad_coef * q[self.quad_idx[:, 0]] * q[self.quad_idx[:, 1]]
            u += np.dot(vals, q[self.quad_rows]) / 3.0
        if len(self.cubic_rows):
            i = self.cubic_idx
            vals = self.cubic_coef * q[i[:, 0]] * q[i[:, 1]] * q[i[:, 2]]
            u += np.dot(vals, q[self.cubic_rows]) / 4.0
        return u

    def to_dict(self):
        return {
            "n": self.n,
            "quadratic": [
                [int(r), int(a), int(b), float(c)]
                for r, (a, b), c in zip(self.quad_rows, self.quad_idx, self.quad_coef)
            ],
            "cubic": [
                [int(r), int(a), int(b), int(d), float(c)]
                for r, (a, b, d), c in zip(self.cubic_rows, self.cubic_idx, self.cubic_coef)
            ],
        }

    @classmethod
    def from_dict(cls, d):
        quad = np.array(d.get("quadratic", []), dtype=float).reshape(-1, 4)
        cub = np.array(d.get("cubic", []), dtype=float).reshape(-1, 5)
        return cls(
            int(d["n"]),
            quad[:, 0].astype(int),
            quad[:, 1:3].astype(int),
            quad[:, 3],
            cub[:, 0].astype(int),
            cub[:, 1:4].astype(int),
            cub[:, 4],
        )


@dataclass(frozen=True, eq=False)
class MechModel:
    """Full-order model ``M q'' + C q' + K q + f_int(q) = eps f_ext``.

    ``obs_dof`` selects the displacement used as the signed amplitude
    observable ``s(x)``. ``damping`` holds ``(alpha, beta)`` when the model
    was built with Rayleigh damping ``C = alpha M + beta K``.
    """

    M: np.ndarray
    C: np.ndarray
    K: np.ndarray
    f_int: PolyForce
    obs_dof: int = 0
    damping: tuple[float, float] | None = None
    name: str = "model"

    def __post_init__(self):
        M, C, K = (_frozen(a) for a in (self.M, self.C, self.K))
        n = M.shape[0]
        for a, nm in [(M, "M"), (C, "C"), (K, "K")]:
            if a.shape != (n, n):
                raise ModelError(f"{nm} must be {n}x{n}, got {a.shape}")
        if not np.allclose(M, M.T, atol=1e-12 * max(1.0, np.abs(M).max())):
            raise ModelError("M must be symmetric")
        if not np.allclose(K, K.T, atol=1e-12 * max(1.0, np.abs(K).max())):
            raise ModelError("K must be symmetric")
        try:
            np.linalg.cholesky(M)
        except np.linalg.LinAlgError as exc:
            raise ModelError("M must be positive definite") from exc
        if np.linalg.eigvalsh(K).min() < -1e-10 * max(1.0, np.abs(K).max()):
            raise ModelError("K must be positive semidefinite")
        if self.f_int.n != n:
            raise ModelError("internal force dimension does not match M")
        if not 0 <= self.obs_dof < n:
            raise ModelError("observable DOF out of range")
        if self.damping is not None:
            a, b = self.damping
            if not np.allclose(C, a * M + b * K, rtol=0, atol=1e-12 * max(1.0, np.abs(C).max())):
                raise ModelError("stored Rayleigh coefficients do not reproduce C")
            object.__setattr__(self, "damping", (float(a), float(b)))
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "K", K)

    @property
    def n(self):
        return self.M.shape[0]

    @property
    def proportional(self):
        return self.damping is not None

    @cached_property
    def Minv(self):
        Mi = sla.cho_solve(sla.cho_factor(self.M), np.eye(self.n))
        Mi.setflags(write=False)
        return Mi

    @cached_property
    def _modes(self):
        w2, U = sla.eigh(self.K, self.M)
        w2 = np.clip(w2, 0.0, None)
        # deterministic sign: largest-magnitude entry positive
        pivot = np.argmax(np.abs(U), axis=0)
        U = U * np.sign(U[pivot, np.arange(self.n)])
        w = np.sqrt(w2)
        w.setflags(write=False)
        U.setflags(write=False)
        return w, U

    def conservative_modes(self):
        """Natural frequencies (ascending) and mass-normalized mode shapes."""
        return self._modes

    def internal_force(self, q):
        return self.f_int(q)

    def observable(self, x):
        """Signed amplitude ``s(x)``: the displacement of ``obs_dof``."""
        x = np.asarray(x)
        return x[..., self.obs_dof]

    def energy(self, x):
        """Total mechanical energy (kinetic + linear + nonlinear potential)."""
        x = np.asarray(x, dtype=float)
        q, v = x[: self.n], x[self.n :]
        return 0.5 * v @ self.M @ v + 0.5 * q @ self.K @ q + self.f_int.potential(q)

    def vector_field(self, forcing: "ForcingSpec | None" = None):
        """First-order right-hand side ``x' = f(t, x)``."""
        n = self.n
        Mi = self.Minv
        MiK, MiC = Mi @ self.K, Mi @ self.C
        fnl = self.f_int
        nonlinear = not fnl.is_zero

        def rhs(t, x):
            q, v = x[:n], x[n:]
            acc = -MiK @ q - MiC @ v
            if nonlinear:
                acc -= Mi @ fnl(q)
            if forcing is not None:
                acc += Mi @ forcing(t)
            return np.concatenate([v, acc])

        return rhs

    def jacobian_field(self, x):
        n = self.n
        q = np.asarray(x)[:n]
        J = np.zeros((2 * n, 2 * n))
        J[:n, n:] = np.eye(n)
        J[n:, :n] = -self.Minv @ (self.K + self.f_int.jacobian(q))
        J[n:, n:] = -self.Minv @ self.C
        return J


class ForcingSpec:
    """Multi-harmonic external load ``eps * sum_k f_k exp(i <k, Omega> t)``.

    Harmonics are stored closed under conjugation: adding ``k`` implies
    ``-k`` with the conjugate amplitude, so the load is real.
    """

    def __init__(self, harmonics, Omega, eps=1.0, tol=1e-12):
        Omega = np.atleast_1d(np.asarray(Omega, dtype=float))
        store: dict[tuple[int, ...], np.ndarray] = {}
        for k, fk in harmonics:
            k = tuple(int(v) for v in np.atleast_1d(k))
            if len(k) != len(Omega):
                raise ModelError("harmonic index length must match the frequency vector")
            fk = np.asarray(fk, dtype=complex)
            if k in store:
                store[k] = store[k] + fk
            else:
                store[k] = fk.copy()
        closed = dict(store)
        for k, fk in store.items():
            mk = tuple(-v for v in k)
            if mk == k:
                if np.abs(fk.imag).max(initial=0.0) > tol * max(1.0, np.abs(fk).max()):
                    raise ModelError("zero harmonic must be real")
                closed[k] = fk.real.astype(complex)
            elif mk in store:
                if not np.allclose(store[mk], np.conj(fk), rtol=0, atol=tol * max(1.0, np.abs(fk).max())):
                    raise ModelError(f"harmonics {k} and {mk} are not complex conjugates")
            else:
                closed[mk] = np.conj(fk)
        keys = sorted(closed)
        self.Omega = _frozen(Omega)
        self.eps = float(eps)
        self.keys = keys
        self.amplitudes = _frozen(np.array([closed[k] for k in keys]), complex)
        self.freqs = _frozen(np.array([np.dot(k, Omega) for k in keys]))
        if self.amplitudes.ndim != 2:
            raise ModelError("all harmonic amplitudes must have the same length")

    @classmethod
    def periodic(cls, f0, Omega, eps=1.0):
        """``eps * f0 cos(Omega t)`` written as ``f0 (e^{iOt} + e^{-iOt}) / 2``."""
        f0 = np.asarray(f0, dtype=float)
        return cls([((1,), f0 / 2), ((-1,), f0 / 2)], [Omega], eps)

    @classmethod
    def multi_frequency(cls, f0, Omegas, phases=None, eps=1.0):
        """``eps * sum_j f0 cos(Omega_j t + phase_j)`` with independent frequencies."""
        Omegas = np.atleast_1d(np.asarray(Omegas, dtype=float))
        phases = np.zeros(len(Omegas)) if phases is None else np.asarray(phases, dtype=float)
        f0 = np.asarray(f0, dtype=float)
        l = len(Omegas)
        harm = []
        for j in range(l):
            k = np.zeros(l, int)
            k[j] = 1
            harm.append((k, f0 * np.exp(1j * phases[j]) / 2))
        return cls(harm, Omegas, eps)

    @property
    def n(self):
        return self.amplitudes.shape[1]

    def positive(self):
        """Iterate ``(freq, amplitude)`` over harmonics with ``freq >= 0``.

        For ``freq == 0`` the amplitude is the full static load; otherwise the
        real load is ``2 Re(amp e^{i freq t})``.
        """
        for nu, fk in zip(self.freqs, self.amplitudes):
            if nu >= 0:
                yield nu, fk

    def __call__(self, t):
        """Load vector at time ``t`` (scaled by ``eps``)."""
        phase = np.exp(1j * self.freqs * t)
        return self.eps * np.real(phase @ self.amplitudes)

    def scaled(self, eps):
        out = object.__new__(ForcingSpec)
        out.__dict__.update(self.__dict__)
        out.eps = float(eps)
        return out

    def to_dict(self):
        return {
            "Omega": self.Omega.tolist(),
            "eps": self.eps,
            "harmonics": [
                {"k": list(k), "re": fk.real.tolist(), "im": fk.imag.tolist()}
                for k, fk in zip(self.keys, self.amplitudes)
            ],
        }

    @classmethod
    def from_dict(cls, d):
        harm = [
            (h["k"], np.asarray(h["re"], dtype=float) + 1j * np.asarray(h["im"], dtype=float))
            for h in d["harmonics"]
        ]
        return cls(harm, d["Omega"], d.get("eps", 1.0))


def _spring_terms(n, springs):
    """Assemble K and cubic terms for springs ``((a, b), k, gamma)`` (-1 = ground)."""
    K = np.zeros((n, n))
    rows, idx, coef = [], [], []
    for (a, b), k, g in springs:
        for i in (a, b):
            if i >= 0:
                K[i, i] += k
        if a >= 0 and b >= 0:
            K[a, b] -= k
            K[b, a] -= k
        if g == 0.0:
            continue
        # elongation e = q_b - q_a; force on b is +g e^3, on a is -g e^3
        terms = []  # (coefficient, index tuple) of e^3 expansion
        ends = [(b, 1.0), (a, -1.0)]
        ends = [(i, s) for i, s in ends if i >= 0]
        for i1, s1 in ends:
            for i2, s2 in ends:
                for i3, s3 in ends:
                    terms.append((s1 * s2 * s3, (i1, i2, i3)))
        for node, sign in ends:
            for c, t in terms:
                rows.append(node)
                idx.append(tuple(sorted(t)))
                coef.append(sign * g * c)
    # merge duplicate (row, idx) entries
    merged: dict[tuple[int, tuple[int, ...]], float] = {}
    for r, t, c in zip(rows, idx, coef):
        merged[(r, t)] = merged.get((r, t), 0.0) + c
    items = [(r, t, c) for (r, t), c in sorted(merged.items()) if abs(c) > 0.0]
    return K, items


def build_oscillator_chain(
    n_masses: int,
    stiffness_profile: Sequence[float],
    cubic_coeffs: Sequence[float] | None = None,
    damping: tuple[float, float] = (0.0, 0.0),
    obs_dof: int = 0,
    name: str = "chain",
) -> MechModel:
    """Chain of unit masses joined by linear + cubic springs.

    ``stiffness_profile`` holds one entry per spring. With ``n_masses + 1``
    springs both ends are grounded; with ``n_masses`` springs the chain is
    grounded on the left and free on the right. ``cubic_coeffs`` (same
    length) gives each spring's cubic coefficient, the restoring force being
    ``k e + gamma e^3`` for elongation ``e``.
    """
    n = int(n_masses)
    if n < 1:
        raise ModelError("need at least one mass")
    k = np.asarray(stiffness_profile, dtype=float).ravel()
    if len(k) not in (n, n + 1):
        raise ModelError(f"stiffness_profile needs {n} or {n + 1} entries")
    if np.any(k <= 0) or not np.all(np.isfinite(k)):
        raise ModelError("spring stiffnesses must be positive")
    g = np.zeros_like(k) if cubic_coeffs is None else np.asarray(cubic_coeffs, dtype=float).ravel()
    if g.shape != k.shape:
        raise ModelError("cubic_coeffs must match stiffness_profile")
    springs = [((-1, 0), k[0], g[0])]
    springs += [((i - 1, i), k[i], g[i]) for i in range(1, n)]
    if len(k) == n + 1:
        springs.append(((n - 1, -1), k[n], g[n]))
    K, items = _spring_terms(n, springs)
    a, b = (float(v) for v in damping)
    M = np.eye(n)
    C = a * M + b * K
    w2 = np.linalg.eigvalsh(K)
    # zero damping is allowed for conservative checks; spectra reject it later
    if np.any(a + b * w2 < 0):
        raise ModelError("Rayleigh coefficients give negative damping on some mode")
    fnl = PolyForce(
        n,
        cubic_rows=[r for r, _, _ in items],
        cubic_idx=np.array([t for _, t, _ in items], dtype=int).reshape(-1, 3),
        cubic_coef=[c for _, _, c in items],
    )
    return MechModel(M, C, K, fnl, obs_dof=obs_dof, damping=(a, b), name=name)


def chain_ratio_tuning(ratio: float, k_end: float = 1.0) -> np.ndarray:
    """Springs of a symmetric grounded 2-mass chain with ``w2 / w1 = ratio``.

    Symmetric chain: ``w1^2 = k_end`` and ``w2^2 = k_end + 2 k_c``.
    """
    if ratio <= 1:
        raise ModelError("frequency ratio must exceed 1")
    k_c = k_end * (ratio**2 - 1) / 2
    return np.array([k_end, k_c, k_end])
