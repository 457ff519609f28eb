"""Semantic exception hierarchy shared by all estimation modules."""


class TruncEstimateError(Exception):
    """Base class for every error raised by this package."""


class DomainError(TruncEstimateError, ValueError):
    """An argument is outside the mathematical domain of an operation."""


class DimensionMismatchError(DomainError):
    """Operands live on hypercubes of different dimension."""


class CapabilityError(TruncEstimateError):
    """An exact (enumeration-based) operation was asked beyond its size ceiling."""


class RejectionBudgetError(TruncEstimateError):
    """A rejection sampler exhausted its attempt budget.

    Signals that the truncation set has too little mass under the proposal
    distribution.  ``attempts`` carries the number of proposals consumed.
    """

    def __init__(self, message, attempts=None):
        super().__init__(message)
        self.attempts = attempts


class FatnessDeficitError(TruncEstimateError):
    """A coordinate could not be reconstructed within budget.

    Raised by the reconstruction sampler when some coordinate never sees a
    qualifying (flip-inside) truncated sample.  ``coordinates`` lists the
    stuck coordinate indices.
    """

    def __init__(self, message, coordinates=()):
        super().__init__(message)
        self.coordinates = tuple(coordinates)


class IdentifiabilityError(TruncEstimateError):
    """The truncated support does not contain d linearly independent points."""


class IllConditionedError(TruncEstimateError):
    """The identifiability linear system is numerically too ill-conditioned.

    ``condition_number`` carries the measured value.
    """

    def __init__(self, message, condition_number=None):
        super().__init__(message)
        self.condition_number = condition_number


class ConfigError(TruncEstimateError, ValueError):
    """An experiment configuration failed validation."""
