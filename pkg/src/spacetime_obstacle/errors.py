"""Exception types raised by the solver library."""


class ObstacleError(Exception):
    """Base class for all library errors."""


class ArgumentError(ObstacleError, ValueError):
    """Invalid arguments (counts, intervals, markings, parameters)."""


class UnsupportedError(ObstacleError, NotImplementedError):
    """Requested operation is not available for this mesh/family/problem."""


class DataError(ObstacleError, ValueError):
    """Problem data violates an assumption or could not be evaluated."""


class DomainError(ObstacleError, ValueError):
    """Evaluation point lies outside the space-time cylinder."""


class LinearAlgebraError(ObstacleError, ArithmeticError):
    """A linear solve failed (non-positive pivot, stagnation, singularity)."""


class NonConvergenceError(ObstacleError, RuntimeError):
    """The active set iteration did not settle within the iteration budget."""

    def __init__(self, message, last_iterate=None, iterations=0):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.iterations = iterations


class InternalError(ObstacleError, RuntimeError):
    """An internal consistency check failed."""
