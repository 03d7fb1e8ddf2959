"""Exception hierarchy shared by all modules."""


class DelayRobustError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(DelayRobustError, ValueError):
    """Input failed a basic validity check (finite entries, sign, range)."""


class DimensionError(ValidationError):
    """Matrix or vector shapes are inconsistent."""


class PreconditionError(DelayRobustError, ValueError):
    """An operation was called outside its domain (e.g. non-Hurwitz matrix)."""


class InfeasibleError(DelayRobustError, ValueError):
    """A requested certificate does not exist for the given data."""


class CoverageError(DelayRobustError, ValueError):
    """A stored trajectory does not cover the interval an operation needs."""


class NumericalError(DelayRobustError, ArithmeticError):
    """An iterative numerical method failed to converge."""

    def __init__(self, message, iterations=None):
        super().__init__(message)
        self.iterations = iterations


class ConsistencyError(DelayRobustError, RuntimeError):
    """Internal invariant violated during a simulation."""


class DivergenceError(DelayRobustError, ArithmeticError):
    """A simulation blew up; ``trace`` holds the part computed so far."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace
