"""Exception types shared across the numeric core."""


class TsvarError(Exception):
    """Base class for all library errors."""


class DegenerateGrid(TsvarError):
    """The scale parameters or anchor admit no positive-graininess grid."""


class NotAMember(TsvarError):
    """A requested time value does not lie on the grid."""


class TooFewPoints(TsvarError):
    """The grid is too short for the requested difference operation."""


class IndexUnderflow(TsvarError):
    """A delayed index falls below the bottom of the grid."""


class BadRange(TsvarError):
    """Integration or index limits are out of order or out of bounds."""


class GridMismatch(TsvarError):
    """Two sampled functions live on different grids."""


class ShapeMismatch(TsvarError):
    """Array shapes or boundary data do not conform to the problem."""


class NonFiniteLagrangian(TsvarError):
    """The integrand produced a non-finite value."""


class BadVariation(TsvarError):
    """A variation direction violates the admissibility constraints."""


class NoConvergence(TsvarError):
    """The iteration reached its limit without meeting the tolerance.

    Carries the best iterate found so far, so callers can report
    partial results.
    """

    def __init__(self, message, best=None, gradient_norm=None, iterations=0):
        super().__init__(message)
        self.best = best
        self.gradient_norm = gradient_norm
        self.iterations = iterations


class SingularSystem(TsvarError):
    """The linearized stationarity system admits no usable step."""


class EvalDomainError(TsvarError):
    """Expression evaluation left the real domain (log/sqrt/division)."""
