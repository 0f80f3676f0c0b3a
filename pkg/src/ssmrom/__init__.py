"""Data-driven reduced-order models on spectral submanifolds of mechanical systems."""
from .errors import ConfigError, ModelError, NumericalError, SSMError
from .model import ForcingSpec, MechModel, PolyForce, build_oscillator_chain, chain_ratio_tuning
from .normal_form import NormalFormModel, fit_normal_form, select_resonant_terms
from .pipeline import build_dataset, decay_trajectory, fit_rom, heldout_nmte, training_plan
from .polymap import PolyMap
from .response import backbone, continue_frc, evaluate_branch, prepare_forcing, simulate_rom
from .rom import SSMRom
from .simulate import Trajectory, integrate, modal_initial_condition, static_solve
from .spectral import ChartBasis, build_chart, compute_spectrum

__version__ = "0.1.0"
