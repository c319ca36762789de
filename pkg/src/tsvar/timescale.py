"""Backward-jump time scales rho(t) = q*t - h and finite grids on them.

A scale is parameterized by 0 < q <= 1 and h >= 0 (not both trivial), so
every point is left-scattered and the backward jump contracts toward the
fixed point t* = -h/(1-q) when q < 1, or steps by h when q = 1.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGrid, NotAMember

#: Relative tolerance for grid membership tests.
MEMBERSHIP_RTOL = 1e-9


@dataclass(frozen=True)
class TimeScaleSpec:
    """The pair (q, h) defining rho(t) = q*t - h.

    Restricted to 0 < q <= 1, h >= 0, excluding (1, 0): that pair has
    zero graininess everywhere, so no finite grid exists.
    """

    q: float
    h: float

    def __post_init__(self):
        if not (0.0 < self.q <= 1.0):
            raise DegenerateGrid(f"degenerate time scale: q={self.q} outside (0, 1]")
        if self.h < 0.0:
            raise DegenerateGrid(f"degenerate time scale: h={self.h} negative")
        if self.q == 1.0 and self.h == 0.0:
            raise DegenerateGrid("degenerate time scale: (q, h) = (1, 0) is dense")

    @property
    def fixed_point(self) -> float:
        """Fixed point of rho; -inf for the pure shift q = 1."""
        if self.q == 1.0:
            return -np.inf
        return -self.h / (1.0 - self.q)


def rho(spec: TimeScaleSpec, t: float) -> float:
    """Backward jump q*t - h."""
    return spec.q * t - spec.h


def sigma(spec: TimeScaleSpec, t: float) -> float:
    """Forward jump (t + h)/q, the inverse of rho."""
    return (t + spec.h) / spec.q


def nu(spec: TimeScaleSpec, t: float) -> float:
    """Graininess t - rho(t) = (1 - q)*t + h."""
    return (1.0 - spec.q) * t + spec.h


def rho_iter(spec: TimeScaleSpec, t: float, k: int) -> float:
    """k-fold composition of rho.

    Matches the closed form q**k * t - h * sum(q**i, i < k); k = 0 is the
    identity.
    """
    if k < 0:
        raise ValueError(f"iteration count must be nonnegative, got {k}")
    x = t
    for _ in range(k):
        x = rho(spec, x)
    return x


class Grid:
    """Ascending chain t_0 < t_1 < ... < t_N with t_{j-1} = rho(t_j).

    Immutable after construction.  ``nu[j]`` holds the graininess of t_j;
    for j >= 1 it equals t_j - t_{j-1} while nu[0] is the scale's intrinsic
    value at t_0.  Graininess is carried exactly through the offset
    recursion delta_{j-1} = q*delta_j from the fixed point, so it keeps
    full relative precision even when deep points collapse onto t* in
    double precision.
    """

    __slots__ = ("spec", "points", "nu")

    def __init__(self, spec: TimeScaleSpec, points: np.ndarray, nu: np.ndarray):
        self.spec = spec
        self.points = points
        self.nu = nu
        points.flags.writeable = False
        nu.flags.writeable = False

    @property
    def steps(self) -> int:
        """N: number of points minus one."""
        return len(self.points) - 1

    def __len__(self) -> int:
        return len(self.points)

    def __repr__(self):
        return (f"Grid(q={self.spec.q}, h={self.spec.h}, "
                f"[{self.points[0]:g}, {self.points[-1]:g}], steps={self.steps})")


def build_grid(spec: TimeScaleSpec, b: float, steps: int) -> Grid:
    """Anchor at b and iterate rho downward for the given number of steps.

    Raises DegenerateGrid when any generated point has non-positive
    graininess (the anchor lies at or below the fixed point of rho).
    """
    if steps < 1:
        raise DegenerateGrid(f"grid needs at least one step, got {steps}")
    if not np.isfinite(b):
        raise DegenerateGrid(f"grid anchor must be finite, got {b}")
    q, h = spec.q, spec.h
    if q == 1.0:
        offsets = h * np.arange(steps, -1, -1, dtype=float)
        points = b - offsets
        nus = np.full(steps + 1, h)
    else:
        tstar = spec.fixed_point
        delta_b = b - tstar
        if delta_b <= 0.0:
            raise DegenerateGrid(
                f"degenerate time scale grid: anchor {b} at or below fixed point {tstar}")
        deltas = delta_b * q ** np.arange(steps, -1, -1, dtype=float)
        points = tstar + deltas
        nus = (1.0 - q) * deltas
    if not np.all(nus > 0.0):
        raise DegenerateGrid("degenerate time scale grid: graininess underflowed to zero")
    return Grid(spec, points, nus)


def locate(grid: Grid, t: float) -> int:
    """Index of the grid point matching t within relative tolerance 1e-9."""
    pts = grid.points
    j = int(np.searchsorted(pts, t))
    for cand in (j - 1, j, j + 1):
        if 0 <= cand < len(pts):
            if abs(t - pts[cand]) <= MEMBERSHIP_RTOL * max(1.0, abs(pts[cand])):
                return cand
    raise NotAMember(f"{t} is not a point of {grid!r}")
