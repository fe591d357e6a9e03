class ImcondError(Exception):
    """Base class for all errors raised by imcond."""


class DomainError(ImcondError, ValueError):
    pass


class ParameterDomainError(DomainError):
    pass


class IntegrandError(ImcondError, ArithmeticError):
    def __init__(self, abscissa, value):
        self.abscissa = abscissa
        self.value = value
        super().__init__(f"integrand returned {value!r} at x={abscissa!r}")


class ConfigurationError(ImcondError):
    pass


class ModelInconsistencyError(ImcondError):
    pass


class UnsupportedAssertionError(ImcondError):
    pass


class EstimationError(ImcondError, ArithmeticError):
    pass


class InitializationError(ImcondError):
    pass


class DesignDegeneracyError(ImcondError):
    pass


class DegenerateFamilyError(ImcondError):
    pass


class EquivarianceError(ImcondError):
    def __init__(self, shift, violation):
        self.shift = shift
        self.violation = violation
        super().__init__(
            f"statistic is not location equivariant: shift c={shift!r} "
            f"gives |T(x+c) - T(x) - c| = {violation:.3g}"
        )


class InvariantViolationError(ImcondError):
    pass
