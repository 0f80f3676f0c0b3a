"""Multivariate polynomial maps with a graded-lex exponent table."""
from __future__ import annotations

import itertools
from functools import lru_cache
from math import comb

import numpy as np

from .io import decode_complex, encode_complex

__all__ = ["monomial_exponents", "monomial_count", "monomial_features", "PolyMap"]


@lru_cache(maxsize=None)
def _exponents(d: int, o_min: int, o_max: int):
    rows = []
    for deg in range(o_min, o_max + 1):
        for combo in itertools.combinations_with_replacement(range(d), deg):
            rows.append(np.bincount(combo, minlength=d) if combo else np.zeros(d, dtype=int))
    out = np.array(rows, dtype=int).reshape(-1, d)
    out.setflags(write=False)
    return out


def monomial_exponents(d: int, o_min: int, o_max: int) -> np.ndarray:
    """Exponent rows of all monomials in ``d`` variables with degree in [o_min, o_max].

    Degrees ascend; within a degree the order is that of
    ``combinations_with_replacement`` (y1^2, y1 y2, y2^2, ...).
    """
    if o_min < 0 or o_max < o_min:
        raise ValueError("need 0 <= o_min <= o_max")
    return _exponents(int(d), int(o_min), int(o_max))


def monomial_count(d: int, o_min: int, o_max: int) -> int:
    return sum(comb(d + k - 1, k) for k in range(o_min, o_max + 1))


class _Table:
    """Recursion tables to build all monomials up to a degree by one product each."""

    def __init__(self, exps):
        self.exps = np.asarray(exps, dtype=int)
        d = self.exps.shape[1]
        o_max = int(self.exps.sum(axis=1).max(initial=0))
        self.full = monomial_exponents(d, 0, o_max)
        index = {tuple(e): i for i, e in enumerate(self.full)}
        self.parent = np.zeros(len(self.full), dtype=int)
        self.var = np.zeros(len(self.full), dtype=int)
        for i, e in enumerate(self.full[1:], start=1):
            v = int(np.flatnonzero(e)[-1])
            p = e.copy()
            p[v] -= 1
            self.parent[i], self.var[i] = index[tuple(p)], v
        self.pick = np.array([index[tuple(e)] for e in self.exps], dtype=int)
        # derivative lookup: d/dy_v of monomial j = exps[j, v] * full[lower[j, v]]
        self.lower = np.zeros(self.exps.shape, dtype=int)
        for j, e in enumerate(self.exps):
            for v in range(d):
                if e[v] > 0:
                    p = e.copy()
                    p[v] -= 1
                    self.lower[j, v] = index[tuple(p)]

    def all_monomials(self, Y):
        F = np.empty((Y.shape[0], len(self.full)), dtype=np.result_type(Y.dtype, float))
        F[:, 0] = 1.0
        for i in range(1, len(self.full)):
            F[:, i] = F[:, self.parent[i]] * Y[:, self.var[i]]
        return F


@lru_cache(maxsize=64)
def _table(d, o_min, o_max):
    return _Table(monomial_exponents(d, o_min, o_max))


def monomial_features(Y, o_min: int, o_max: int) -> np.ndarray:
    """Monomials of ``Y`` (shape ``(P, d)`` or ``(d,)``) in graded-lex order."""
    if o_min < 1:
        raise ValueError("o_min must be >= 1")
    Y = np.asarray(Y)
    single = Y.ndim == 1
    Y2 = np.atleast_2d(Y)
    tab = _table(Y2.shape[1], o_min, o_max)
    F = tab.all_monomials(Y2)[:, tab.pick]
    return F[0] if single else F


class PolyMap:
    """``p(y) = L y + C phi(y)`` with ``phi`` the monomials of ``exponents``.

    ``coeffs`` is ``(d_out, n_monomials)``; ``linear`` is an optional
    ``(d_out, d_in)`` matrix. ``conjugate_pairs`` marks maps whose inputs
    are ``(z, conj z)`` stacks.
    """

    def __init__(self, exponents, coeffs, linear=None, conjugate_pairs=False):
        exps = np.asarray(exponents, dtype=int)
        if exps.ndim != 2:
            raise ValueError("exponents must be a 2-D table")
        if len({tuple(e) for e in exps}) != len(exps):
            raise ValueError("duplicate exponent rows")
        if np.any(exps < 0):
            raise ValueError("negative exponent")
        coeffs = np.atleast_2d(np.asarray(coeffs))
        if coeffs.shape[1] != len(exps):
            raise ValueError("coefficient columns must match the exponent table")
        self.exponents = exps
        self.coeffs = coeffs
        self.linear = None if linear is None else np.atleast_2d(np.asarray(linear))
        if self.linear is not None and self.linear.shape != (coeffs.shape[0], exps.shape[1]):
            raise ValueError("linear part has wrong shape")
        self.conjugate_pairs = bool(conjugate_pairs)
        self._tab = _Table(exps) if len(exps) else None

    @classmethod
    def zeros(cls, d_in, d_out, o_min, o_max, linear=None, dtype=complex, conjugate_pairs=False):
        exps = monomial_exponents(d_in, o_min, o_max)
        return cls(exps, np.zeros((d_out, len(exps)), dtype=dtype), linear, conjugate_pairs)

    @property
    def d_in(self):
        return self.exponents.shape[1]

    @property
    def d_out(self):
        return self.coeffs.shape[0]

    @property
    def degrees(self):
        return self.exponents.sum(axis=1)

    @property
    def order(self):
        return int(self.degrees.max(initial=1))

    def features(self, Y):
        Y = np.atleast_2d(Y)
        if self._tab is None:
            return np.zeros((Y.shape[0], 0))
        return self._tab.all_monomials(Y)[:, self._tab.pick]

    def _check(self, Y):
        Y = np.asarray(Y)
        if Y.shape[-1] != self.d_in:
            raise ValueError(f"input dimension {Y.shape[-1]} != {self.d_in}")
        return Y

    def __call__(self, Y, nonlinear_only=False):
        Y = self._check(Y)
        single = Y.ndim == 1
        Y2 = np.atleast_2d(Y)
        out = self.features(Y2) @ self.coeffs.T
        if self.linear is not None and not nonlinear_only:
            out = out + Y2 @ self.linear.T
        return out[0] if single else out

    def jacobian(self, Y, nonlinear_only=False):
        """Jacobian, shape ``(P, d_out, d_in)`` (or ``(d_out, d_in)``)."""
        Y = self._check(Y)
        single = Y.ndim == 1
        Y2 = np.atleast_2d(Y)
        dtype = np.result_type(Y2.dtype, self.coeffs.dtype, float)
        J = np.zeros((Y2.shape[0], self.d_out, self.d_in), dtype=dtype)
        if self._tab is not None:
            F = self._tab.all_monomials(Y2)
            for v in range(self.d_in):
                dphi = F[:, self._tab.lower[:, v]] * self.exponents[:, v]
                J[:, :, v] = dphi @ self.coeffs.T
        if self.linear is not None and not nonlinear_only:
            J = J + self.linear
        return J[0] if single else J

    def derivative_features(self, Y):
        """``d phi / dy``, shape ``(P, n_monomials, d_in)``."""
        Y2 = np.atleast_2d(self._check(Y))
        F = self._tab.all_monomials(Y2)
        D = np.empty((Y2.shape[0], len(self.exponents), self.d_in), dtype=F.dtype)
        for v in range(self.d_in):
            D[:, :, v] = F[:, self._tab.lower[:, v]] * self.exponents[:, v]
        return D

    def scaled(self, c):
        """Map for inputs scaled by ``c``: degree-k coefficients times ``c**k``."""
        return PolyMap(self.exponents, self.coeffs * float(c) ** self.degrees, None if self.linear is None else self.linear * c, self.conjugate_pairs)

    def max_coeff(self):
        return float(np.abs(self.coeffs).max(initial=0.0))

    def to_dict(self):
        return {
            "exponents": self.exponents.tolist(),
            "coeffs": encode_complex(self.coeffs),
            "linear": None if self.linear is None else encode_complex(self.linear),
            "conjugate_pairs": self.conjugate_pairs,
            "real": bool(np.isrealobj(self.coeffs) and (self.linear is None or np.isrealobj(self.linear))),
        }

    @classmethod
    def from_dict(cls, d):
        coeffs = decode_complex(d["coeffs"]) if d["coeffs"] else np.zeros((0, len(d["exponents"])))
        lin = None if d.get("linear") is None else decode_complex(d["linear"])
        if d.get("real"):
            coeffs = coeffs.real
            lin = None if lin is None else lin.real
        exps = np.asarray(d["exponents"], dtype=int)
        if exps.size == 0 and lin is not None:
            exps = exps.reshape(0, lin.shape[1])
        coeffs = np.asarray(coeffs).reshape(-1, len(exps))
        return cls(exps, coeffs, lin, d.get("conjugate_pairs", False))
