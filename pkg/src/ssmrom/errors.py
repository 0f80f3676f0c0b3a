"""Exception hierarchy.

Everything raised deliberately by the package derives from :class:`SSMError`
so callers (the CLI in particular) can separate numerical failures from
programming errors.
"""


class SSMError(Exception):
    """Base class for all package errors."""


class ModelError(SSMError, ValueError):
    """Invalid full-order model definition."""


class ConfigError(SSMError, ValueError):
    """Invalid pipeline configuration."""


class NumericalError(SSMError, RuntimeError):
    """Base class for failures of a numerical procedure."""


class IntegrationError(NumericalError):
    def __init__(self, message, t_fail=None):
        super().__init__(message if t_fail is None else f"{message} (t = {t_fail:.6g})")
        self.t_fail = t_fail


class StaticSolveError(NumericalError):
    def __init__(self, residual, fraction):
        super().__init__(
            f"Newton stagnated: residual {residual:.3e} at load fraction {fraction:.4f}"
        )
        self.residual = residual
        self.fraction = fraction


class SpectrumError(NumericalError):
    """Spectrum violates an assumption (e.g. real or unstable eigenvalues)."""


class ChartError(NumericalError):
    """Degenerate or inconsistent chart."""


class IllPosedFitError(NumericalError):
    """Regression problem is rank deficient."""


class ConvergenceError(NumericalError):
    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


class OuterResonanceError(NumericalError):
    def __init__(self, message, mode=None):
        super().__init__(message)
        self.mode = mode


class SingularPolarError(NumericalError):
    """Polar field evaluated at zero amplitude with nonzero forcing."""


class DivergenceError(NumericalError):
    """Reduced-model trajectory left its validity range."""
