"""Exception hierarchy.

Configuration problems and numerical failures are kept apart so the CLI can
map them onto distinct exit codes.
"""


class SteinflowError(Exception):
    """Base class for all package errors."""


class InvalidInputError(SteinflowError, ValueError):
    pass


class ConfigError(SteinflowError, ValueError):
    pass


class DegenerateConfigurationError(InvalidInputError):
    """Raised when a point configuration admits no meaningful answer."""


class UnsupportedKernelError(SteinflowError, TypeError):
    pass


class GridMismatchError(InvalidInputError):
    pass


class NumericalError(SteinflowError, ArithmeticError):
    """Base for failures of a numerical procedure."""


class NumericalBlowupError(NumericalError):
    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class NonConvergenceError(NumericalError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class InstabilityError(NumericalError):
    pass
