"""Exception hierarchy shared across the package."""


class SgdoError(Exception):
    """Base class for all package errors."""


class ParameterError(SgdoError, ValueError):
    """An argument is outside the operation's domain."""


class RankDeficiencyError(ParameterError):
    """The averaged Gram matrix is singular but strong convexity was requested."""


class UnsupportedQueryError(SgdoError):
    """The problem lacks the data needed to answer the query (e.g. no known optimum)."""


class RegimeError(SgdoError):
    """A step-size regime was requested without the constants it needs."""


class PreconditionError(SgdoError):
    """A hypothesis of a bound (such as alpha <= 2/L) is not met."""


class DivergenceError(SgdoError, FloatingPointError):
    """An iterate became non-finite or exceeded the divergence threshold."""

    def __init__(self, epoch: int, step: int, message: str = ""):
        self.epoch = epoch
        self.step = step
        super().__init__(message or f"iterate diverged at epoch {epoch}, step {step}")


class RecordingError(SgdoError):
    """A trajectory does not carry the data an averaging scheme needs."""


class ConfigurationError(SgdoError):
    """An experiment configuration is inconsistent."""


class InsufficientSamplesError(ParameterError):
    """Too few Monte Carlo samples for a reliable standard error."""


class BoundViolation(SgdoError, AssertionError):
    """A certified inequality failed on observed data."""


class DomainError(ParameterError):
    """A value is outside the mathematical domain (e.g. log of a non-positive number)."""
