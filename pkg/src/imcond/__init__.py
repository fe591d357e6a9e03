"""Conditional inferential models: plausibility functions, intervals and regions
built by conditioning on fully observed features of the auxiliary variable."""

__version__ = "0.1.0"

from imcond.errors import (  # noqa: F401
    ConfigurationError,
    DegenerateFamilyError,
    DesignDegeneracyError,
    DomainError,
    EquivarianceError,
    EstimationError,
    ImcondError,
    InitializationError,
    IntegrandError,
    InvariantViolationError,
    ModelInconsistencyError,
    ParameterDomainError,
    UnsupportedAssertionError,
)
