"""Exception types shared across the package.

Each class carries the process exit code the command-line driver uses
when the error escapes a run.
"""


class GalmassError(Exception):
    exit_code = 1


class ConfigError(GalmassError):
    exit_code = 2


class DataError(GalmassError):
    exit_code = 3


class NumericalError(GalmassError):
    exit_code = 4


class ConstraintViolation(NumericalError):
    """A density profile or pdf matrix breaks non-negativity or monotonicity."""


class DomainError(NumericalError):
    """An argument lies outside the domain of the function."""


class UnboundBinning(NumericalError):
    """The data-driven energy binning would reach unbound energies."""


class GeometryError(NumericalError):
    """Singular line-of-sight geometry (zero radius)."""


class QuadratureError(NumericalError):
    """Adaptive quadrature failed to converge."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class EnvelopeError(NumericalError):
    """Rejection sampling efficiency fell below the configured threshold."""
