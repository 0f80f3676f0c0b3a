"""Polynomial regression of the SSM parametrization and reduced dynamics."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import IllPosedFitError
from .polymap import PolyMap, monomial_exponents
from .spectral import ChartBasis

log = logging.getLogger(__name__)

__all__ = ["FitReport", "lstsq_qr", "fit_parametrization", "fit_reduced_dynamics", "orthogonality_error"]


@dataclass
class FitReport:
    residual: float
    relative_residual: float
    n_samples: int
    n_monomials: int
    rank: int
    orthogonality: float | None = None


def lstsq_qr(Phi, T, ridge: float = 0.0, weights=None, rank_tol: float = 1e-12):
    """Solve ``min |Phi C - T|^2 + ridge |C|^2`` by Householder QR.

    Returns ``(C, rank)``. Without ridge a numerically rank-deficient
    ``Phi`` raises :class:`IllPosedFitError`.
    """
    Phi = np.asarray(Phi)
    T = np.asarray(T)
    if weights is not None:
        sw = np.sqrt(np.asarray(weights, dtype=float))[:, None]
        Phi, T = Phi * sw, T * sw
    k = Phi.shape[1]
    if ridge > 0:
        Phi = np.vstack([Phi, np.sqrt(ridge) * np.eye(k, dtype=Phi.dtype)])
        T = np.vstack([T, np.zeros((k, T.shape[1]), dtype=T.dtype)])
    if Phi.shape[0] < k:
        raise IllPosedFitError(f"{Phi.shape[0]} samples for {k} unknowns: add data, ridge, or lower the order")
    Q, R = sla.qr(Phi, mode="economic")
    d = np.abs(np.diag(R))
    rank = int(np.sum(d > rank_tol * d.max(initial=0.0))) if k else 0
    if rank < k and ridge == 0:
        raise IllPosedFitError(f"feature matrix has rank {rank} < {k}: use ridge or lower the order")
    C = sla.solve_triangular(R, Q.conj().T @ T)
    return C, rank


def _scale(Y):
    c = float(np.abs(Y).max(initial=0.0))
    return c if c > 0 else 1.0


def _check_samples(P, k, what):
    if P < 2 * k:
        raise IllPosedFitError(f"{what}: {P} samples for {k} monomials (need at least {2 * k})")
    if P < 10 * k:
        log.warning("%s: only %d samples for %d monomials", what, P, k)


def orthogonality_error(chart: ChartBasis, v_nl: PolyMap) -> float:
    return float(np.abs(chart.W0 @ v_nl.coeffs).max(initial=0.0))


def fit_parametrization(Y, X, chart: ChartBasis, order: int, ridge: float = 0.0, weights=None, o_min: int = 2):
    """Regress ``x - V0 y`` on the monomials of ``y`` (degrees ``o_min..order``).

    Returns ``(v_nl, report)``; ``v_nl`` carries ``V0`` as linear part.
    Inputs are rescaled to unit size before the QR solve.
    """
    Y = np.asarray(Y)
    X = np.asarray(X)
    if Y.shape[0] != X.shape[0]:
        raise ValueError("Y and X must have the same number of samples")
    if Y.shape[1] != chart.V0.shape[1] or X.shape[1] != chart.V0.shape[0]:
        raise ValueError("data dimensions do not match the chart")
    exps = monomial_exponents(Y.shape[1], o_min, order)
    _check_samples(len(Y), len(exps), "parametrization")
    c = _scale(Y)
    T = X - Y @ chart.V0.T
    probe = PolyMap(exps, np.zeros((1, len(exps))))
    Phi = probe.features(Y / c)
    C, rank = lstsq_qr(Phi, T, ridge, weights)
    coeffs = C.T / c ** exps.sum(axis=1)
    if not chart.complex_coords:
        coeffs = coeffs.real
    v_nl = PolyMap(exps, coeffs, chart.V0, conjugate_pairs=chart.complex_coords)
    res = np.linalg.norm(T - Phi @ C)
    rep = FitReport(float(res), float(res / max(np.linalg.norm(X), 1e-300)), len(Y), len(exps), rank,
                    orthogonality_error(chart, v_nl))
    return v_nl, rep


def fit_reduced_dynamics(Y, Ydot, chart: ChartBasis, order: int, ridge: float = 0.0, weights=None, o_min: int = 2):
    """Regress ``ydot - R0 y`` on the monomials of ``y``.

    For mechanical charts the first ``m`` rows (velocity definitions) are
    structurally zero and not fitted.
    """
    Y = np.asarray(Y)
    Ydot = np.asarray(Ydot)
    if Y.shape != Ydot.shape:
        raise ValueError("Y and Ydot shapes differ")
    exps = monomial_exponents(Y.shape[1], o_min, order)
    _check_samples(len(Y), len(exps), "reduced dynamics")
    c = _scale(Y)
    T = Ydot - Y @ chart.R0.T
    m = chart.m
    rows = np.arange(m, 2 * m) if chart.mechanical else np.arange(2 * m)
    probe = PolyMap(exps, np.zeros((1, len(exps))))
    Phi = probe.features(Y / c)
    C, rank = lstsq_qr(Phi, T[:, rows], ridge, weights)
    coeffs = np.zeros((2 * m, len(exps)), dtype=C.dtype)
    coeffs[rows] = C.T / c ** exps.sum(axis=1)
    if not chart.complex_coords:
        coeffs = coeffs.real
    r_nl = PolyMap(exps, coeffs, chart.R0, conjugate_pairs=chart.complex_coords)
    res = np.linalg.norm(T[:, rows] - Phi @ C)
    rep = FitReport(float(res), float(res / max(np.linalg.norm(Ydot), 1e-300)), len(Y), len(exps), rank)
    return r_nl, rep
