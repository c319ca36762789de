"""Delayed integral functionals, their first variation, Euler-Lagrange
residuals, and a Newton solver for stationary trajectories.

Geometry: the grid spans the prehistory window and the horizon in one
chain.  With delay steps a0, index A = a0 marks the left end of the
integration range; rows 0..A of a trajectory hold the prescribed
prehistory, row N the fixed endpoint, and rows A+1..N-1 are free.

The integrand at t_i sees the state through four slots:
    v1 = y(t_{i-1})                       value at the backward jump
    v2 = (y_i - y_{i-1}) / nu_i           derivative at t_i
    v3 = y(t_{i-a0-1})                    delayed backward-jump value
    v4 = (y_{i-a0} - y_{i-a0-1}) / nu_{i-a0}   derivative at the delayed point
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import (BadVariation, NonFiniteLagrangian, ShapeMismatch)
from .nabla_calc import GridFunction
from .solvers import BandStructure, SolverOptions, newton_solve
from .timescale import Grid

#: A trajectory is just a grid function whose boundary rows are data.
Trajectory = GridFunction

FD_STEP = 1e-6  # central-difference step scale for Lagrangian partials


def fd_partial(fn, args: list, slot: int, n: int) -> np.ndarray:
    """Central difference of fn w.r.t. the vector argument in `slot`."""
    base = np.asarray(args[slot], dtype=float)
    out = np.empty(n)
    for j in range(n):
        step = FD_STEP * max(1.0, abs(base[j]))
        hi, lo = base.copy(), base.copy()
        hi[j] += step
        lo[j] -= step
        out[j] = (fn(*args[:slot], hi, *args[slot + 1:])
                  - fn(*args[:slot], lo, *args[slot + 1:])) / (2.0 * step)
    return out


@dataclass(frozen=True)
class DelayedLagrangian:
    """Scalar integrand L(x, v1, v2, v3, v4) with optional analytic partials.

    Each partial maps the same arguments to an n-vector.  Missing partials
    are replaced by central finite differences with step 1e-6 times the
    argument scale.
    """

    eval: Callable[..., float]
    d1: Optional[Callable[..., np.ndarray]] = None
    d2: Optional[Callable[..., np.ndarray]] = None
    d3: Optional[Callable[..., np.ndarray]] = None
    d4: Optional[Callable[..., np.ndarray]] = None

    def partial(self, slot: int, x, v1, v2, v3, v4) -> np.ndarray:
        analytic = (self.d1, self.d2, self.d3, self.d4)[slot - 1]
        if analytic is not None:
            return np.atleast_1d(np.asarray(analytic(x, v1, v2, v3, v4), dtype=float))
        return fd_partial(self.eval, [x, v1, v2, v3, v4], slot, len(v1))

    def partials_defect(self, x, v1, v2, v3, v4) -> float:
        """Max relative gap between analytic partials and finite differences."""
        worst = 0.0
        args = [x, np.asarray(v1, float), np.asarray(v2, float),
                np.asarray(v3, float), np.asarray(v4, float)]
        for slot, fn in enumerate((self.d1, self.d2, self.d3, self.d4), start=1):
            if fn is None:
                continue
            a = np.atleast_1d(np.asarray(fn(*args), dtype=float))
            f = fd_partial(self.eval, args, slot, len(args[1]))
            scale = max(1.0, float(np.max(np.abs(a))), float(np.max(np.abs(f))))
            worst = max(worst, float(np.max(np.abs(a - f))) / scale)
        return worst


class VariationalProblem:
    """Fixed-boundary delayed problem on a grid.

    Parameters
    ----------
    grid : the full chain, including the prehistory window
    n : state dimension
    alpha0 : delay steps; index A of the integration left end equals alpha0
    prehistory : values on rows 0..A, shape (A+1, n) (scalars broadcast)
    endpoint : value pinned at row N, shape (n,)
    lagrangian : DelayedLagrangian
    """

    def __init__(self, grid: Grid, n: int, alpha0: int, prehistory, endpoint,
                 lagrangian: DelayedLagrangian):
        if alpha0 < 0:
            raise ShapeMismatch(f"delay must be nonnegative, got {alpha0}")
        N = grid.steps
        if N - alpha0 < alpha0 + 1:
            raise ShapeMismatch(
                f"delay exceeds grid: {alpha0} delay steps need at least "
                f"{2 * alpha0 + 1} grid steps, got {N}")
        self.grid = grid
        self.n = n
        self.alpha0 = alpha0
        phi = np.asarray(prehistory, dtype=float)
        if phi.ndim == 0:
            phi = np.full((alpha0 + 1, n), float(phi))
        elif phi.ndim == 1 and n == 1:
            phi = phi[:, None]
        if phi.shape != (alpha0 + 1, n):
            raise ShapeMismatch(
                f"prehistory must cover rows 0..{alpha0} with {n} components, "
                f"got shape {phi.shape}")
        c0 = np.atleast_1d(np.asarray(endpoint, dtype=float))
        if c0.shape != (n,):
            raise ShapeMismatch(f"endpoint must have shape ({n},), got {c0.shape}")
        self.prehistory = phi
        self.endpoint = c0
        self.lagrangian = lagrangian

    @property
    def A(self) -> int:
        return self.alpha0

    @property
    def N(self) -> int:
        return self.grid.steps

    @property
    def free_indices(self) -> np.ndarray:
        return np.arange(self.A + 1, self.N)

    # -- trajectory plumbing ------------------------------------------------

    def make_trajectory(self, interior) -> Trajectory:
        """Assemble a conforming trajectory from free interior rows."""
        interior = np.asarray(interior, dtype=float).reshape(self.N - 1 - self.A, self.n)
        values = np.empty((self.N + 1, self.n))
        values[:self.A + 1] = self.prehistory
        values[self.A + 1:self.N] = interior
        values[self.N] = self.endpoint
        return GridFunction(self.grid, values)

    def initial_trajectory(self) -> Trajectory:
        """Linear interpolation between the prehistory edge and the endpoint."""
        t = self.grid.points
        tA, tN = t[self.A], t[self.N]
        w = (t[self.A + 1:self.N] - tA) / (tN - tA)
        interior = (1.0 - w[:, None]) * self.prehistory[-1] + w[:, None] * self.endpoint
        return self.make_trajectory(interior)

    def check_conforms(self, y: Trajectory):
        if y.values.shape != (self.N + 1, self.n):
            raise ShapeMismatch(
                f"trajectory shape {y.values.shape} does not match "
                f"({self.N + 1}, {self.n})")
        if not np.array_equal(y.values[:self.A + 1], self.prehistory):
            raise ShapeMismatch("trajectory does not reproduce the prehistory rows")
        if not np.array_equal(y.values[self.N], self.endpoint):
            raise ShapeMismatch("trajectory does not reproduce the fixed endpoint")

    # -- integrand arguments ------------------------------------------------

    def integrand_args(self, values: np.ndarray, i: int):
        nu = self.grid.nu
        a0 = self.alpha0
        v1 = values[i - 1]
        v2 = (values[i] - values[i - 1]) / nu[i]
        v3 = values[i - a0 - 1]
        v4 = (values[i - a0] - values[i - a0 - 1]) / nu[i - a0]
        return self.grid.points[i], v1, v2, v3, v4


@dataclass(frozen=True)
class ResidualReport:
    """Pointwise defects of the stationarity conditions.

    delayed: equations on the delayed region (one row per index in
    delayed_indices); tail: the delay-free equations near the horizon;
    boundary: the natural boundary value of the delayed-rate partial;
    gradient: exact partial derivatives of the discrete functional with
    respect to each free row.
    """

    delayed_indices: np.ndarray
    delayed: np.ndarray
    tail_indices: np.ndarray
    tail: np.ndarray
    boundary: np.ndarray
    gradient_indices: np.ndarray
    gradient: np.ndarray

    def norms(self) -> dict:
        out = {}
        for name in ("delayed", "tail", "boundary", "gradient"):
            arr = getattr(self, name)
            out[name] = group_norms(arr)
        return out

    def max_equation_residual(self) -> float:
        """Largest defect over the stationarity-condition groups."""
        vals = [np.max(np.abs(a)) if a.size else 0.0
                for a in (self.delayed, self.tail, self.boundary)]
        return float(max(vals))


def group_norms(arr: np.ndarray) -> dict:
    flat = np.asarray(arr, dtype=float).ravel()
    if flat.size == 0:
        return {"max": 0.0, "rms": 0.0}
    return {"max": float(np.max(np.abs(flat))),
            "rms": float(np.sqrt(np.mean(flat ** 2)))}


def _partial_streams(p: VariationalProblem, values: np.ndarray):
    """Arrays P1..P4 of Lagrangian partials per integrand index A+1..N."""
    N, n = p.N, p.n
    P = [np.full((N + 1, n), np.nan) for _ in range(4)]
    L = p.lagrangian
    for i in range(p.A + 1, N + 1):
        args = p.integrand_args(values, i)
        for s in range(4):
            P[s][i] = L.partial(s + 1, *args)
    return P


def evaluate_functional(p: VariationalProblem, y: Trajectory) -> float:
    """Weighted sum of the integrand over the integration range (a, b]."""
    p.check_conforms(y)
    values = y.values
    nu = p.grid.nu
    total = 0.0
    for i in range(p.A + 1, p.N + 1):
        li = p.lagrangian.eval(*p.integrand_args(values, i))
        total += nu[i] * li
    if not np.isfinite(total):
        raise NonFiniteLagrangian("integrand produced a non-finite value")
    return float(total)


def first_variation(p: VariationalProblem, y: Trajectory, eta: GridFunction) -> float:
    """Derivative of the functional along an admissible variation.

    eta must vanish on the prehistory rows and at the endpoint; the result
    equals d/de of evaluate_functional(y + e*eta) at e = 0.
    """
    p.check_conforms(y)
    if eta.values.shape != y.values.shape:
        raise ShapeMismatch("variation shape does not match the trajectory")
    ev = eta.values
    if np.any(ev[:p.A + 1] != 0.0) or np.any(ev[p.N] != 0.0):
        raise BadVariation(
            "variation must vanish on the prehistory rows and at the endpoint")
    values = y.values
    nu = p.grid.nu
    a0 = p.alpha0
    total = 0.0
    for i in range(p.A + 1, p.N + 1):
        x, v1, v2, v3, v4 = p.integrand_args(values, i)
        L = p.lagrangian
        term = (L.partial(1, x, v1, v2, v3, v4) @ ev[i - 1]
                + L.partial(2, x, v1, v2, v3, v4) @ ((ev[i] - ev[i - 1]) / nu[i])
                + L.partial(3, x, v1, v2, v3, v4) @ ev[i - a0 - 1]
                + L.partial(4, x, v1, v2, v3, v4)
                @ ((ev[i - a0] - ev[i - a0 - 1]) / nu[i - a0]))
        total += nu[i] * term
    return float(total)


def functional_gradient(p: VariationalProblem, y: Trajectory) -> np.ndarray:
    """Exact partials of the discrete functional w.r.t. free rows A+1..N-1."""
    p.check_conforms(y)
    return _gradient_from_streams(p, _partial_streams(p, y.values))


def _gradient_from_streams(p: VariationalProblem, P) -> np.ndarray:
    P1, P2, P3, P4 = P
    nu = p.grid.nu
    N, a0 = p.N, p.alpha0
    ks = p.free_indices
    g = nu[ks + 1, None] * P1[ks + 1] + P2[ks] - P2[ks + 1]

    i3 = ks + a0 + 1
    ok3 = i3 <= N
    i3c = np.minimum(i3, N)
    g = g + np.where(ok3[:, None], nu[i3c, None] * P3[i3c], 0.0)

    i4a = ks + a0
    ok4a = i4a <= N
    i4ac = np.minimum(i4a, N)
    g = g + np.where(ok4a[:, None], (nu[i4ac] / nu[ks])[:, None] * P4[i4ac], 0.0)

    ok4b = i3 <= N
    g = g - np.where(ok4b[:, None], (nu[i3c] / nu[ks + 1])[:, None] * P4[i3c], 0.0)
    return g


def el_residuals(p: VariationalProblem, y: Trajectory) -> ResidualReport:
    """Stationarity-condition defects along a trajectory.

    The delayed-region equation at index i reads

        (P2_i - P2_{i-1})/nu_i + q^{-a0} (P4_{i+a0} - P4_{i+a0-1})/nu_i
            - P1_i - q^{-a0} P3_{i+a0}

    for i = A+2 .. N-a0; the tail equation drops the delayed terms and
    covers i = N-a0+1 .. N.  The equation formally extends one index
    further left, but there it references integrand values below the
    prehistory window and is not a stationarity condition of the discrete
    functional, so the report starts at A+2.  The boundary entry is the
    delayed-rate partial at the horizon, which vanishes identically when
    the integrand does not use v4.
    """
    p.check_conforms(y)
    P1, P2, P3, P4 = _partial_streams(p, y.values)
    nu = p.grid.nu
    N, a0, A = p.N, p.alpha0, p.A
    qinv = p.grid.spec.q ** (-a0)

    d_idx = np.arange(A + 2, N - a0 + 1)
    if d_idx.size:
        delayed = ((P2[d_idx] - P2[d_idx - 1]) / nu[d_idx, None]
                   + qinv * (P4[d_idx + a0] - P4[d_idx + a0 - 1]) / nu[d_idx, None]
                   - P1[d_idx] - qinv * P3[d_idx + a0])
    else:
        delayed = np.zeros((0, p.n))

    t_idx = np.arange(N - a0 + 1, N + 1)
    if t_idx.size:
        tail = (P2[t_idx] - P2[t_idx - 1]) / nu[t_idx, None] - P1[t_idx]
    else:
        tail = np.zeros((0, p.n))

    boundary = P4[N].copy()
    gradient = _gradient_from_streams(p, (P1, P2, P3, P4))
    return ResidualReport(d_idx, delayed, t_idx, tail, boundary,
                          p.free_indices, gradient)


@dataclass(frozen=True)
class ELSolution:
    y: Trajectory
    iterations: int
    gradient_norm: float


def solve_el(p: VariationalProblem, y_init: Trajectory,
             opts: SolverOptions | None = None) -> ELSolution:
    """Newton iteration on the exact gradient of the discrete functional.

    The solved system is square (one stationarity equation per free row);
    the delayed/tail equations of el_residuals are a verification overlay
    on top of it.
    """
    p.check_conforms(y_init)
    nfree = p.N - 1 - p.A

    def grad_fn(z):
        y = p.make_trajectory(z.reshape(nfree, p.n))
        try:
            g = functional_gradient(p, y)
        except NonFiniteLagrangian:
            return np.full(nfree * p.n, np.inf)
        return g.ravel()

    structure = BandStructure(
        grid_index=np.repeat(p.free_indices, p.n),
        channel=np.tile(np.arange(p.n), nfree),
        width=p.alpha0 + 2)
    z0 = y_init.values[p.A + 1:p.N].ravel()
    try:
        z, iters, gnorm = newton_solve(grad_fn, z0, opts, structure)
    except Exception as err:
        if hasattr(err, "best") and err.best is not None:
            err.best = p.make_trajectory(np.asarray(err.best).reshape(nfree, p.n))
        raise
    return ELSolution(p.make_trajectory(z.reshape(nfree, p.n)), iters, gnorm)
