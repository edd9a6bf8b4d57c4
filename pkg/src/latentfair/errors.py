"""Exception and warning types raised across the package."""


class LatentFairError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(LatentFairError, ValueError):
    pass


class DegenerateFitError(LatentFairError, ArithmeticError):
    """A mixture fit collapsed (e.g. singular covariance even after jitter)."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class NumericError(LatentFairError, ArithmeticError):
    """Non-finite or zero density encountered."""

    def __init__(self, message, component=None):
        super().__init__(message)
        self.component = component


class TooLargeError(LatentFairError, ValueError):
    """Exact enumeration would exceed the configured cell cap."""


class SeparationError(LatentFairError, ArithmeticError):
    """Logistic coefficients diverged (perfect or quasi-perfect separation)."""


class UndefinedMetricError(LatentFairError, ValueError):
    pass


class SchemaError(LatentFairError, ValueError):
    """Dataset schema, CSV content or configuration is invalid."""


class FairnessWarning(UserWarning):
    """Recoverable condition worth surfacing (excluded groups, jitter, reseeding)."""
