"""
Error hierarchy for the linearized free-boundary lab.

Every failure raised by a library module derives from LinfbError so the
command line driver can map it onto an exit code.
"""


class LinfbError(Exception):
    """Root of all lab errors."""


class ConfigError(LinfbError, ValueError):
    """Malformed or out-of-range configuration."""


class DomainError(LinfbError, ValueError):
    """Input outside the domain of a pointwise law or grid constructor."""


class DegenerateMapError(LinfbError):
    """The background flow map has a non-positive Jacobian at some node."""

    def __init__(self, message, kappa_min=None):
        super().__init__(message)
        self.kappa_min = kappa_min


class PreconditionError(LinfbError, ValueError):
    """An operator was called on data violating its stated precondition."""


class UnsupportedOrderError(LinfbError, ValueError):
    """Requested norm or compatibility order is beyond what is implemented."""


class SolverError(LinfbError, RuntimeError):
    """A linear solve or inner iteration did not converge."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class ContractionError(SolverError):
    """The Picard iteration did not reach its tolerance within max_iter sweeps."""

    def __init__(self, message, ratios=None, increments=None):
        super().__init__(message)
        self.ratios = list(ratios or [])
        self.increments = list(increments or [])
