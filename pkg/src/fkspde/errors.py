"""Exception hierarchy.

``ValidationError`` subclasses signal bad input (CLI exit status 2); every
other ``FKError`` is a runtime failure (exit status 3).
"""


class FKError(Exception):
    """Base class for all package errors."""


class ValidationError(FKError):
    pass


class HurstOutOfRange(ValidationError):
    pass


class AdmissibilityViolated(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class EmptyDomainMesh(ValidationError):
    pass


class StartOutsideDomain(ValidationError):
    pass


class ConfigParseError(ValidationError):
    pass


class NonRectangularDomain(ValidationError):
    pass


class BallNotInsideDomain(ValidationError):
    pass


class GridMismatch(ValidationError):
    pass


class DegenerateGrid(ValidationError):
    pass


class CoefficientEvaluationFailure(FKError):
    pass


class OutOfCoverage(FKError):
    pass


class FactorizationFailure(FKError):
    pass


class InsufficientSamples(FKError):
    pass


class IterationDivergence(FKError):
    pass


class NonConvergedResidual(FKError):
    pass


class StabilityViolation(FKError):
    pass


class HolderUnavailable(FKError):
    """Raised when the time-Holder exponent needs min(H_space) > 5/6."""


class NonPositiveEstimate(FKError):
    pass


# Hurst validation errors surfaced by solvers.
HurstInvalid = (HurstOutOfRange, AdmissibilityViolated)
