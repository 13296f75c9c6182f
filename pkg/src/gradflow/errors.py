"""Exception hierarchy shared by all gradflow modules."""


class GradflowError(Exception):
    """Base class for every error raised by the package."""


class InvalidInputError(GradflowError, ValueError):
    pass


class DomainError(GradflowError, ValueError):
    pass


class UnsupportedDimensionError(GradflowError, ValueError):
    pass


class NumericalError(GradflowError, RuntimeError):
    """An integration or solver failure (CLI exit code 3)."""


class StiffnessError(NumericalError):
    pass


class RHSFailureError(NumericalError):
    pass


class StepSizeError(NumericalError):
    pass


class BlowupError(GradflowError, ArithmeticError):
    """A closed-form solution has a pole at or before the requested time."""

    def __init__(self, message, t_blowup):
        super().__init__(message)
        self.t_blowup = t_blowup


class ConfigError(GradflowError, ValueError):
    """Scenario configuration failed validation (CLI exit code 2)."""

    def __init__(self, message, field=None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field
