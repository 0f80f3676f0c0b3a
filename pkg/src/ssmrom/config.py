"""Pipeline configuration: JSON in, validated dataclasses out."""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ModelError
from .io import read_json, write_json
from .model import ForcingSpec, MechModel, build_oscillator_chain
from .spectral import STYLES

__all__ = ["ModelConfig", "ChartConfig", "TrainingConfig", "ForcingConfig", "PipelineConfig", "load_config"]


@dataclass
class ModelConfig:
    """Either chain-builder parameters or a directory written by :func:`ssmrom.io.save_model`."""

    n_masses: int | None = 2
    springs: list | None = None
    cubic: list | None = None
    damping: list = field(default_factory=lambda: [0.01, 0.05])
    obs_dof: int = 0
    path: str | None = None

    def build(self, base: Path | None = None) -> MechModel:
        if self.path is not None:
            from .io import load_model

            p = Path(self.path)
            if base is not None and not p.is_absolute():
                p = base / p
            if not (p / "model.json").exists():
                raise ConfigError(f"no model.json under {p}")
            return load_model(p)
        n = self.n_masses
        springs = self.springs if self.springs is not None else [1.0] * (n + 1)
        cubic = self.cubic if self.cubic is not None else [0.0] * len(springs)
        try:
            return build_oscillator_chain(n, springs, cubic, damping=tuple(self.damping), obs_dof=self.obs_dof)
        except ModelError as exc:
            raise ConfigError(str(exc)) from exc


@dataclass
class ChartConfig:
    modes: list = field(default_factory=lambda: [0])
    style: str = "modal-complex"
    order: int | None = None
    orders: list = field(default_factory=lambda: [3, 5, 7])
    nf_order: int | None = None
    dofs: list | None = None  # selected DOFs for the non-modal chart
    nmte_target: float = 10.0


@dataclass
class TrainingConfig:
    strategy: int = 2
    amplitude: float | list = 1.0
    n_periods: float = 30.0
    samples_per_period: int = 100
    stride: int = 1
    tol: float = 1e-10
    truncate_periods: float = 5.0
    test_scale: float = 0.95
    load: list | None = None


@dataclass
class ForcingConfig:
    """Periodic load ``eps f0 cos(Omega t)``; ``mode`` replaces ``f0`` by ``M u_mode``."""

    f0: list | None = None
    mode: int | None = None
    eps: list = field(default_factory=lambda: [0.01])
    Omega_range: list | None = None  # relative to the forced mode frequency
    n_validate: int = 6
    cycles: int = 50

    def load_vector(self, model: MechModel):
        if self.mode is not None:
            _, U = model.conservative_modes()
            return model.M @ U[:, self.mode]
        if self.f0 is None:
            f = np.zeros(model.n)
            f[model.obs_dof] = 1.0
            return f
        f = np.asarray(self.f0, dtype=float)
        if f.shape != (model.n,):
            raise ConfigError(f"forcing.f0 must have {model.n} entries")
        return f

    def spec(self, model: MechModel, Omega, eps):
        return ForcingSpec.periodic(self.load_vector(model), Omega, eps=eps)


_SECTIONS = {"model": ModelConfig, "chart": ChartConfig, "training": TrainingConfig, "forcing": ForcingConfig}


@dataclass
class PipelineConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    chart: ChartConfig = field(default_factory=ChartConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    forcing: ForcingConfig = field(default_factory=ForcingConfig)
    out: str = "run"
    seed: int = 0
    base_dir: str = "."

    @classmethod
    def from_dict(cls, d: dict, base_dir=".") -> "PipelineConfig":
        if not isinstance(d, dict):
            raise ConfigError("configuration must be a JSON object")
        d = copy.deepcopy(d)
        kw = {}
        for name, typ in _SECTIONS.items():
            sec = d.pop(name, {}) or {}
            if not isinstance(sec, dict):
                raise ConfigError(f"section '{name}' must be an object")
            unknown = set(sec) - set(typ.__dataclass_fields__)
            if unknown:
                raise ConfigError(f"unknown keys in '{name}': {sorted(unknown)}")
            kw[name] = typ(**sec)
        for key in ("out", "seed"):
            if key in d:
                kw[key] = d.pop(key)
        if d:
            raise ConfigError(f"unknown top-level keys: {sorted(d)}")
        cfg = cls(**kw, base_dir=str(base_dir))
        cfg.validate()
        return cfg

    def to_dict(self):
        d = asdict(self)
        d.pop("base_dir")
        return d

    def override(self, out=None, order=None, style=None, seed=None):
        if out is not None:
            self.out = str(out)
        if order is not None:
            self.chart.order = int(order)
        if style is not None:
            self.chart.style = style
        if seed is not None:
            self.seed = int(seed)
        self.validate()
        return self

    def validate(self):
        m, c, t, f = self.model, self.chart, self.training, self.forcing
        if m.path is None:
            if not isinstance(m.n_masses, int) or m.n_masses < 1:
                raise ConfigError("model.n_masses must be a positive integer")
            if m.springs is not None and len(m.springs) not in (m.n_masses, m.n_masses + 1):
                raise ConfigError("model.springs must have n_masses or n_masses + 1 entries")
            if m.cubic is not None and m.springs is not None and len(m.cubic) != len(m.springs):
                raise ConfigError("model.cubic must match model.springs in length")
            if len(m.damping) != 2:
                raise ConfigError("model.damping must be [alpha, beta]")
        if c.style not in STYLES:
            raise ConfigError(f"chart.style must be one of {STYLES}")
        if not c.modes or any((not isinstance(j, int)) or j < 0 for j in c.modes):
            raise ConfigError("chart.modes must be a non-empty list of mode indices")
        orders = [c.order] if c.order is not None else c.orders
        if not orders or any((not isinstance(o, int)) or o < 1 for o in orders):
            raise ConfigError("chart orders must be positive integers")
        if c.style == "non-modal" and c.dofs is not None and len(c.dofs) != len(c.modes):
            raise ConfigError("chart.dofs needs one DOF per mode")
        if t.strategy not in (1, 2):
            raise ConfigError("training.strategy must be 1 or 2")
        if np.any(np.asarray(t.amplitude, dtype=float) == 0):
            raise ConfigError("training.amplitude must be nonzero")
        if t.n_periods <= t.truncate_periods:
            raise ConfigError("training.n_periods must exceed training.truncate_periods")
        if t.samples_per_period < 8 or t.stride < 1 or t.tol <= 0:
            raise ConfigError("invalid sampling settings in 'training'")
        if not f.eps or any(e <= 0 for e in f.eps):
            raise ConfigError("forcing.eps must list positive amplitudes")
        if f.Omega_range is not None and (len(f.Omega_range) != 2 or f.Omega_range[0] >= f.Omega_range[1]):
            raise ConfigError("forcing.Omega_range must be [low, high]")
        if not isinstance(self.seed, int):
            raise ConfigError("seed must be an integer")

    @property
    def out_dir(self) -> Path:
        p = Path(self.out)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def snapshot(self, stage: str):
        """Write the resolved configuration next to the stage outputs."""
        out = self.out_dir
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / f"config.{stage}.json", self.to_dict())


def load_config(path) -> PipelineConfig:
    p = Path(path)
    try:
        d = read_json(p)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {p}") from exc
    except ValueError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    try:
        return PipelineConfig.from_dict(d, base_dir=p.parent)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
