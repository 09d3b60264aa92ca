"""Exception hierarchy shared by every module of the package."""


class EuboError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(EuboError, ValueError):
    """Invalid settings: dimension mismatch, bad hyperparameters, unknown keys."""


class InputError(EuboError, ValueError):
    """Invalid data passed to a model or metric (empty batch, bad label)."""


class DegenerateWeightsError(EuboError, FloatingPointError):
    """Importance weights cannot be normalized (all log-weights are -inf or NaN)."""


class CapabilityError(EuboError, TypeError):
    """A model lacks a capability the caller needs, e.g. gradients in theta."""


class OptimizerError(EuboError, FloatingPointError):
    """Non-finite gradient or parameters during an optimizer step.

    ``payload`` carries the offending step count and coordinates.
    """

    def __init__(self, message, payload=None):
        super().__init__(message)
        self.payload = payload or {}


class IngestionError(EuboError, ValueError):
    """A dataset or schema file could not be read."""


class OracleError(EuboError, ArithmeticError):
    """Quadrature produced or met a non-finite value."""


class DivergentIntegralError(OracleError):
    """The requested divergence integral is infinite for the given densities."""
