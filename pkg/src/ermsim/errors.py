"""Exception hierarchy shared by all ermsim modules."""


class ErmError(Exception):
    """Base class for every error raised by ermsim."""


class ParameterError(ErmError, ValueError):
    """A parameter lies outside its admissible range."""


class ConventionError(ParameterError):
    """Trap detunings violate the sign convention (d_r + d_b < 0, d_r > d_b)."""


class RegimeError(ParameterError):
    """The requested quantity is undefined in this parameter regime."""


class PhaseError(ParameterError):
    """An operation was requested outside the phase where it is defined."""


class DimensionError(ErmError, ValueError):
    """Operands live on incompatible Hilbert spaces."""


class NumericError(ErmError, RuntimeError):
    """A numerical routine failed or its result did not pass a health check."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class CutoffError(NumericError):
    """Too much probability sits near the Fock-space truncation edge."""


class StiffnessError(NumericError):
    """The adaptive integrator could not make progress."""


class CoverageError(NumericError):
    """A phase-space grid does not cover the support of the state."""


class FitDegeneracyError(NumericError):
    """A least-squares fit is too ill-conditioned to be trusted."""


class ProjectionError(NumericError):
    """Projection onto a subspace with (numerically) zero weight."""


class OracleScopeError(ErmError, ValueError):
    """A brute-force oracle was asked to handle a system that is too large."""


class ConfigError(ErmError, ValueError):
    """A run configuration failed validation."""
