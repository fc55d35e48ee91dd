"""Exception hierarchy; CLI exit codes key off these classes."""


class ThinShellError(Exception):
    exit_code = 2


class ConfigurationError(ThinShellError, ValueError):
    exit_code = 1


class InputError(ThinShellError, ValueError):
    exit_code = 1


class PreconditionError(ThinShellError, ValueError):
    exit_code = 1


class DegenerateMeasureError(ThinShellError, ValueError):
    pass


class CapabilityError(ThinShellError):
    pass


class NumericalError(ThinShellError, ArithmeticError):
    pass


class InvariantViolation(ThinShellError):
    pass


class TruncationError(ThinShellError):
    """Step budget exhausted; ``partial`` carries whatever was simulated."""

    def __init__(self, message: str, partial=None):
        super().__init__(message)
        self.partial = partial
