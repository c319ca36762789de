"""Backward difference quotients and Cauchy integrals of sampled functions.

All grid points are left-scattered under the supported scales, so the
derivative at t_j is the plain quotient (f_j - f_{j-1}) / nu_j, defined for
j >= 1 (the grid minimum carries no derivative).  Undefined rows of a
result are NaN.
"""

from dataclasses import dataclass

import numpy as np

from .errors import BadRange, GridMismatch, IndexUnderflow, ShapeMismatch, TooFewPoints
from .timescale import Grid


@dataclass(frozen=True)
class GridFunction:
    """Vector-valued samples, one row per grid point."""

    grid: Grid
    values: np.ndarray  # shape (len(grid), n)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] != len(self.grid):
            raise ShapeMismatch(
                f"need {len(self.grid)} rows of samples, got shape {np.asarray(self.values).shape}")
        if values.shape[1] < 1:
            raise ShapeMismatch("component count must be at least 1")
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.shape[1]

    @classmethod
    def sample(cls, grid: Grid, fn) -> "GridFunction":
        """Sample a callable t -> scalar or vector over the grid."""
        rows = [np.atleast_1d(np.asarray(fn(t), dtype=float)) for t in grid.points]
        return cls(grid, np.vstack(rows))


def _same_grid(f: GridFunction, g: GridFunction):
    if f.grid is not g.grid and not (
            f.grid.spec == g.grid.spec and np.array_equal(f.grid.points, g.grid.points)):
        raise GridMismatch("operands live on different grids")


def nabla_derivative(f: GridFunction) -> GridFunction:
    """Difference quotient (f_j - f_{j-1}) / nu_j at indices 1..N.

    Row 0 of the result is NaN: the grid minimum is excluded from the
    derivative's domain.
    """
    if len(f.grid) < 2:
        raise TooFewPoints("derivative needs at least two grid points")
    out = np.full_like(f.values, np.nan)
    out[1:] = (f.values[1:] - f.values[:-1]) / f.grid.nu[1:, None]
    return GridFunction(f.grid, out)


def delayed_nabla(f: GridFunction, alpha0: int) -> GridFunction:
    """Derivative of the delayed composite x -> f(rho^alpha0(x)).

    Computed as the direct quotient (f_{j-a} - f_{j-a-1}) / nu_j; by the
    chain rule this equals q**alpha0 times the derivative of f shifted by
    alpha0 indices.  Defined at indices alpha0+1..N, NaN below.
    """
    if alpha0 < 0:
        raise ValueError(f"delay must be nonnegative, got {alpha0}")
    N = f.grid.steps
    if alpha0 + 1 > N:
        raise IndexUnderflow(
            f"delay {alpha0} leaves no usable index on a grid with {N} steps")
    out = np.full_like(f.values, np.nan)
    lo = alpha0 + 1
    out[lo:] = (f.values[1:N - alpha0 + 1] - f.values[:N - alpha0]) / f.grid.nu[lo:, None]
    return GridFunction(f.grid, out)


def nabla_integral(f: GridFunction, start: int, stop: int) -> np.ndarray:
    """Cauchy integral over (t_start, t_stop]: sum of nu_j * f_j.

    Includes the right endpoint and excludes the left, which makes
    integrating a derivative telescope exactly.  Zero when start == stop.
    """
    N = f.grid.steps
    if not (isinstance(start, (int, np.integer)) and isinstance(stop, (int, np.integer))):
        raise BadRange(f"integral limits must be indices, got ({start}, {stop})")
    if not (0 <= start <= stop <= N):
        raise BadRange(f"bad integral range ({start}, {stop}) on a grid with {N} steps")
    if start == stop:
        return np.zeros(f.n)
    sl = slice(start + 1, stop + 1)
    return (f.grid.nu[sl, None] * f.values[sl]).sum(axis=0)


def product_rule_residual(f: GridFunction, g: GridFunction) -> float:
    """Max defect of (fg)' - f'g - f(rho(.))g' over indices 1..N.

    Test utility for scalar samples; identically zero in exact arithmetic.
    """
    _same_grid(f, g)
    if f.n != 1 or g.n != 1:
        raise GridMismatch("product rule check expects scalar samples")
    fv, gv = f.values[:, 0], g.values[:, 0]
    nu = f.grid.nu
    lhs = (fv[1:] * gv[1:] - fv[:-1] * gv[:-1]) / nu[1:]
    rhs = (fv[1:] - fv[:-1]) / nu[1:] * gv[1:] + fv[:-1] * (gv[1:] - gv[:-1]) / nu[1:]
    return float(np.max(np.abs(lhs - rhs)))
