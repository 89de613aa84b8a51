"""Exception hierarchy shared by all modules."""


class FnPotentialError(Exception):
    """Base class for every error raised by this package."""


class ArgumentError(FnPotentialError, ValueError):
    pass


class DomainError(FnPotentialError, ValueError):
    """A point, ball or grid intersection falls outside where data exists."""


class ResolutionError(FnPotentialError, ValueError):
    """A requested radius or depth is below what the grid can resolve."""


class NumericalFailure(FnPotentialError, ArithmeticError):
    pass


class InputError(FnPotentialError, ValueError):
    """Non-finite or malformed problem data."""


class SchemeError(FnPotentialError, ValueError):
    """A coefficient matrix cannot be written as a monotone stencil combination."""


class ConvergenceError(FnPotentialError, RuntimeError):
    def __init__(self, message, residual_history=()):
        super().__init__(message)
        self.residual_history = list(residual_history)


class ParseError(FnPotentialError, ValueError):
    pass
