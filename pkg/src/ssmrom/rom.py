"""Bundled reduced-order model: chart, parametrization, dynamics, normal form."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .io import read_json, write_json
from .normal_form import NormalFormModel
from .polymap import PolyMap
from .spectral import ChartBasis

__all__ = ["SSMRom", "to_real", "from_real"]


def to_real(Y, complex_coords: bool):
    """Integration state: ``(Re y[:m], Im y[:m])`` for conjugate-pair charts."""
    Y = np.atleast_2d(Y)
    if not complex_coords:
        return Y.real
    m = Y.shape[1] // 2
    return np.hstack([Y[:, :m].real, Y[:, :m].imag])


def from_real(U, complex_coords: bool):
    U = np.atleast_2d(U)
    if not complex_coords:
        return U
    m = U.shape[1] // 2
    Z = U[:, :m] + 1j * U[:, m:]
    return np.hstack([Z, np.conj(Z)])


@dataclass
class SSMRom:
    """Learned model ``x = V0 y + v_nl(y)``, ``ydot = R0 y + r_nl(y)``.

    ``a_max`` is the largest reduced-coordinate norm seen in training and
    ``z_max`` the largest normal-form amplitude.
    """

    chart: ChartBasis
    v: PolyMap
    r: PolyMap
    nf: NormalFormModel | None = None
    obs_dof: int = 0
    a_max: float = np.inf
    z_max: float = np.inf
    report: dict = field(default_factory=dict)

    @property
    def m(self):
        return self.chart.m

    @property
    def complex_coords(self):
        return self.chart.complex_coords

    def reconstruct(self, Y):
        """Physical states for reduced coordinates (real part for complex charts)."""
        X = self.v(np.atleast_2d(Y))
        return np.real(X)

    def observable(self, X):
        return np.atleast_2d(X)[:, self.obs_dof]

    def reduced_field(self, Y):
        return self.r(np.atleast_2d(Y))

    def project(self, X):
        Y = np.atleast_2d(X) @ self.chart.W0.T
        return Y

    def real_field(self, forcing=None):
        """Right-hand side for the real integration state (see :func:`to_real`)."""
        cc = self.complex_coords

        def rhs(t, u):
            Y = from_real(u, cc)
            dY = self.r(Y)
            if forcing is not None:
                dY = dY + forcing.at(t)
            return to_real(dY, cc)[0]

        return rhs

    def to_dict(self):
        return {
            "chart": self.chart.to_dict(),
            "v": self.v.to_dict(),
            "r": self.r.to_dict(),
            "nf": None if self.nf is None else self.nf.to_dict(),
            "obs_dof": self.obs_dof,
            "a_max": self.a_max,
            "z_max": self.z_max,
            "report": self.report,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            ChartBasis.from_dict(d["chart"]),
            PolyMap.from_dict(d["v"]),
            PolyMap.from_dict(d["r"]),
            None if d.get("nf") is None else NormalFormModel.from_dict(d["nf"]),
            int(d.get("obs_dof", 0)),
            float(d.get("a_max", np.inf)),
            float(d.get("z_max", np.inf)),
            d.get("report", {}),
        )

    def save(self, path):
        write_json(Path(path), self.to_dict())

    @classmethod
    def load(cls, path):
        return cls.from_dict(read_json(Path(path)))
