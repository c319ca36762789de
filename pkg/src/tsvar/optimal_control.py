"""Delayed optimal control on backward-jump grids.

The control and the adjoint enter every sum only through their values at
the backward jump, so both are sampled at indices A..N-1 and no terminal
sample exists for them.  The adjoint is a first-class unknown: stationarity
of the augmented index with respect to it reproduces the dynamics
constraint, which keeps the solved system square.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import NonFiniteLagrangian, ShapeMismatch
from .nabla_calc import GridFunction
from .solvers import BandStructure, SolverOptions, newton_solve
from .timescale import Grid
from .variational import FD_STEP, Trajectory, fd_partial, group_norms


def _fd_matrix(fn, args: list, slot: int, out_dim: int, in_dim: int) -> np.ndarray:
    """Central-difference Jacobian of a vector map w.r.t. one argument."""
    base = np.asarray(args[slot], dtype=float)
    out = np.empty((out_dim, in_dim))
    for j in range(in_dim):
        step = FD_STEP * max(1.0, abs(base[j]))
        hi, lo = base.copy(), base.copy()
        hi[j] += step
        lo[j] -= step
        out[:, j] = (np.asarray(fn(*args[:slot], hi, *args[slot + 1:]), dtype=float)
                     - np.asarray(fn(*args[:slot], lo, *args[slot + 1:]), dtype=float)
                     ) / (2.0 * step)
    return out


@dataclass(frozen=True)
class ControlLagrangian:
    """Running cost L(x, y_prev, u_prev, y_delayed, rate_delayed)."""

    eval: Callable[..., float]
    d_y: Optional[Callable[..., np.ndarray]] = None
    d_u: Optional[Callable[..., np.ndarray]] = None
    d_ydel: Optional[Callable[..., np.ndarray]] = None
    d_ratedel: Optional[Callable[..., np.ndarray]] = None

    def partial(self, slot: int, x, yp, up, yd, rd) -> np.ndarray:
        analytic = (self.d_y, self.d_u, self.d_ydel, self.d_ratedel)[slot - 1]
        if analytic is not None:
            return np.atleast_1d(np.asarray(analytic(x, yp, up, yd, rd), dtype=float))
        args = [x, yp, up, yd, rd]
        return fd_partial(self.eval, args, slot, len(args[slot]))


@dataclass(frozen=True)
class Dynamics:
    """Right-hand side G(x, y_prev, u_prev) with partial-derivative access."""

    eval: Callable[..., np.ndarray]
    d_state: Optional[Callable[..., np.ndarray]] = None   # (n, n)
    d_control: Optional[Callable[..., np.ndarray]] = None  # (n, m)

    def jac_state(self, x, yp, up, n: int) -> np.ndarray:
        if self.d_state is not None:
            return np.asarray(self.d_state(x, yp, up), dtype=float).reshape(n, n)
        return _fd_matrix(self.eval, [x, yp, up], 1, n, len(yp))

    def jac_control(self, x, yp, up, n: int, m: int) -> np.ndarray:
        if self.d_control is not None:
            return np.asarray(self.d_control(x, yp, up), dtype=float).reshape(n, m)
        return _fd_matrix(self.eval, [x, yp, up], 2, n, len(up))


class ControlProblem:
    """Delayed control problem with fixed prehistory and terminal state."""

    def __init__(self, grid: Grid, n: int, m: int, alpha0: int, prehistory,
                 terminal, lagrangian: ControlLagrangian, dynamics: Dynamics):
        if alpha0 < 0:
            raise ShapeMismatch(f"delay must be nonnegative, got {alpha0}")
        N = grid.steps
        if N - alpha0 < alpha0 + 1:
            raise ShapeMismatch(
                f"delay exceeds grid: {alpha0} delay steps need at least "
                f"{2 * alpha0 + 1} grid steps, got {N}")
        self.grid = grid
        self.n = n
        self.m = m
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
        c = np.atleast_1d(np.asarray(terminal, dtype=float))
        if c.shape != (n,):
            raise ShapeMismatch(f"terminal state must have shape ({n},), got {c.shape}")
        self.prehistory = phi
        self.terminal = c
        self.lagrangian = lagrangian
        self.dynamics = dynamics

    @property
    def A(self) -> int:
        return self.alpha0

    @property
    def N(self) -> int:
        return self.grid.steps

    @property
    def free_state_indices(self) -> np.ndarray:
        return np.arange(self.A + 1, self.N)

    @property
    def sample_indices(self) -> np.ndarray:
        """Indices carrying control and adjoint samples."""
        return np.arange(self.A, self.N)

    def make_state(self, interior) -> Trajectory:
        interior = np.asarray(interior, dtype=float).reshape(self.N - 1 - self.A, self.n)
        values = np.empty((self.N + 1, self.n))
        values[:self.A + 1] = self.prehistory
        values[self.A + 1:self.N] = interior
        values[self.N] = self.terminal
        return GridFunction(self.grid, values)

    def check_shapes(self, y: Trajectory, u: np.ndarray, lam: np.ndarray):
        ns = self.N - self.A
        if y.values.shape != (self.N + 1, self.n):
            raise ShapeMismatch(f"state shape {y.values.shape} != ({self.N + 1}, {self.n})")
        if not np.array_equal(y.values[:self.A + 1], self.prehistory):
            raise ShapeMismatch("state does not reproduce the prehistory rows")
        if not np.array_equal(y.values[self.N], self.terminal):
            raise ShapeMismatch("state does not reproduce the terminal row")
        if u.shape != (ns, self.m):
            raise ShapeMismatch(f"control shape {u.shape} != ({ns}, {self.m})")
        if lam.shape != (ns, self.n):
            raise ShapeMismatch(f"adjoint shape {lam.shape} != ({ns}, {self.n})")

    def cost_args(self, values: np.ndarray, u: np.ndarray, i: int):
        nu = self.grid.nu
        a0 = self.alpha0
        return (self.grid.points[i], values[i - 1], u[i - 1 - self.A],
                values[i - a0 - 1],
                (values[i - a0] - values[i - a0 - 1]) / nu[i - a0])


def augmented_index(p: ControlProblem, y: Trajectory, u, lam) -> float:
    """Running cost plus adjoint-weighted dynamics defect.

    Coincides with the raw performance index whenever the dynamics hold
    or the adjoint vanishes.
    """
    u = np.asarray(u, dtype=float).reshape(-1, p.m)
    lam = np.asarray(lam, dtype=float).reshape(-1, p.n)
    p.check_shapes(y, u, lam)
    values = y.values
    nu = p.grid.nu
    total = 0.0
    for i in range(p.A + 1, p.N + 1):
        args = p.cost_args(values, u, i)
        rate = (values[i] - values[i - 1]) / nu[i]
        defect = rate - np.asarray(p.dynamics.eval(args[0], args[1], args[2]), dtype=float)
        total += nu[i] * (p.lagrangian.eval(*args) + lam[i - 1 - p.A] @ defect)
    if not np.isfinite(total):
        raise NonFiniteLagrangian("augmented index is not finite")
    return float(total)


def performance_index(p: ControlProblem, y: Trajectory, u) -> float:
    """Running cost alone."""
    u = np.asarray(u, dtype=float).reshape(-1, p.m)
    values = y.values
    total = 0.0
    for i in range(p.A + 1, p.N + 1):
        total += p.grid.nu[i] * p.lagrangian.eval(*p.cost_args(values, u, i))
    return float(total)


def _control_streams(p: ControlProblem, values, u):
    """Cost partials and dynamics data per integrand index A+1..N."""
    N, n, m = p.N, p.n, p.m
    Ly = np.full((N + 1, n), np.nan)
    Lu = np.full((N + 1, m), np.nan)
    Lyd = np.full((N + 1, n), np.nan)
    Lrd = np.full((N + 1, n), np.nan)
    Gv = np.full((N + 1, n), np.nan)
    Gy = np.full((N + 1, n, n), np.nan)
    Gu = np.full((N + 1, n, m), np.nan)
    for i in range(p.A + 1, N + 1):
        args = p.cost_args(values, u, i)
        Ly[i] = p.lagrangian.partial(1, *args)
        Lu[i] = p.lagrangian.partial(2, *args)
        Lyd[i] = p.lagrangian.partial(3, *args)
        Lrd[i] = p.lagrangian.partial(4, *args)
        x, yp, up = args[0], args[1], args[2]
        Gv[i] = np.asarray(p.dynamics.eval(x, yp, up), dtype=float)
        Gy[i] = p.dynamics.jac_state(x, yp, up, n)
        Gu[i] = p.dynamics.jac_control(x, yp, up, n, m)
    return Ly, Lu, Lyd, Lrd, Gv, Gy, Gu


def stationarity_gradient(p: ControlProblem, y: Trajectory, u, lam):
    """Exact partials of the augmented index w.r.t. every free unknown.

    Returns (d_state, d_control, d_adjoint) with rows indexed like the
    corresponding sample arrays.
    """
    u = np.asarray(u, dtype=float).reshape(-1, p.m)
    lam = np.asarray(lam, dtype=float).reshape(-1, p.n)
    p.check_shapes(y, u, lam)
    values = y.values
    nu = p.grid.nu
    N, A, a0 = p.N, p.A, p.alpha0
    Ly, Lu, Lyd, Lrd, Gv, Gy, Gu = _control_streams(p, values, u)

    rate = np.empty((N + 1, p.n))
    rate[1:] = (values[1:] - values[:-1]) / nu[1:, None]

    d_adj = np.empty((N - A, p.n))
    d_ctl = np.empty((N - A, p.m))
    for k in range(A, N):
        i = k + 1
        d_adj[k - A] = nu[i] * (rate[i] - Gv[i])
        d_ctl[k - A] = nu[i] * (Lu[i] - Gu[i].T @ lam[k - A])

    d_state = np.empty((N - 1 - A, p.n))
    for k in range(A + 1, N):
        i = k + 1
        g = nu[i] * Ly[i] + lam[k - 1 - A] - lam[k - A] - nu[i] * (Gy[i].T @ lam[k - A])
        if k + a0 + 1 <= N:
            g = g + nu[k + a0 + 1] * Lyd[k + a0 + 1]
            g = g - (nu[k + a0 + 1] / nu[k + 1]) * Lrd[k + a0 + 1]
        if k + a0 <= N:
            g = g + (nu[k + a0] / nu[k]) * Lrd[k + a0]
        d_state[k - 1 - A] = g
    return d_state, d_ctl, d_adj


@dataclass(frozen=True)
class ControlResidualReport:
    """Defects of the control necessary conditions along (y, u, lam)."""

    adjoint_delayed_indices: np.ndarray
    adjoint_delayed: np.ndarray
    adjoint_tail_indices: np.ndarray
    adjoint_tail: np.ndarray
    control_indices: np.ndarray
    control: np.ndarray
    boundary: np.ndarray
    dynamics_indices: np.ndarray
    dynamics: np.ndarray

    def norms(self) -> dict:
        return {name: group_norms(getattr(self, name))
                for name in ("adjoint_delayed", "adjoint_tail", "control",
                             "boundary", "dynamics")}

    def max_equation_residual(self) -> float:
        vals = [np.max(np.abs(a)) if a.size else 0.0
                for a in (self.adjoint_delayed, self.adjoint_tail,
                          self.control, self.boundary, self.dynamics)]
        return float(max(vals))


def oc_residuals(p: ControlProblem, y: Trajectory, u, lam) -> ControlResidualReport:
    """Pointwise necessary-condition defects.

    The delayed adjoint equation at index i reads

        (lam_{i-1} - lam_{i-2})/nu_i
            + q^{-a0} (Lrd_{i+a0} - Lrd_{i+a0-1})/nu_i
            + Gy_i^T lam_{i-1} - Ly_i - q^{-a0} Lyd_{i+a0}

    for i = A+2 .. N-a0 (the adjoint sample below index A does not exist,
    so the difference quotient first makes sense at A+2).  The tail drops
    all delayed terms and covers i = N-a0+1 .. N.  The control condition
    holds at every index i = A+1 .. N with no boundary exception.
    """
    u = np.asarray(u, dtype=float).reshape(-1, p.m)
    lam = np.asarray(lam, dtype=float).reshape(-1, p.n)
    p.check_shapes(y, u, lam)
    values = y.values
    nu = p.grid.nu
    N, A, a0 = p.N, p.A, p.alpha0
    qinv = p.grid.spec.q ** (-a0)
    Ly, Lu, Lyd, Lrd, Gv, Gy, Gu = _control_streams(p, values, u)

    def lam_at(k):
        return lam[k - A]

    d_idx = np.arange(A + 2, N - a0 + 1)
    delayed = np.zeros((len(d_idx), p.n))
    for r, i in enumerate(d_idx):
        delayed[r] = ((lam_at(i - 1) - lam_at(i - 2)) / nu[i]
                      + qinv * (Lrd[i + a0] - Lrd[i + a0 - 1]) / nu[i]
                      + Gy[i].T @ lam_at(i - 1) - Ly[i] - qinv * Lyd[i + a0])

    t_idx = np.arange(N - a0 + 1, N + 1)
    tail = np.zeros((len(t_idx), p.n))
    for r, i in enumerate(t_idx):
        tail[r] = ((lam_at(i - 1) - lam_at(i - 2)) / nu[i]
                   + Gy[i].T @ lam_at(i - 1) - Ly[i])

    c_idx = np.arange(A + 1, N + 1)
    control = np.zeros((len(c_idx), p.m))
    for r, i in enumerate(c_idx):
        control[r] = Gu[i].T @ lam_at(i - 1) - Lu[i]

    dyn = np.zeros((len(c_idx), p.n))
    for r, i in enumerate(c_idx):
        dyn[r] = (values[i] - values[i - 1]) / nu[i] - Gv[i]

    return ControlResidualReport(d_idx, delayed, t_idx, tail, c_idx, control,
                                 Lrd[N].copy(), c_idx, dyn)


@dataclass(frozen=True)
class ControlSolution:
    y: Trajectory
    u: np.ndarray           # rows for indices A..N-1
    lam: np.ndarray         # rows for indices A..N-1
    report: ControlResidualReport
    iterations: int
    gradient_norm: float


def initial_guess(p: ControlProblem):
    """Linear state interpolation with zero control and adjoint."""
    t = p.grid.points
    w = (t[p.A + 1:p.N] - t[p.A]) / (t[p.N] - t[p.A])
    interior = (1.0 - w[:, None]) * p.prehistory[-1] + w[:, None] * p.terminal
    ns = p.N - p.A
    return p.make_state(interior), np.zeros((ns, p.m)), np.zeros((ns, p.n))


def _pack(p: ControlProblem, y: Trajectory, u, lam):
    parts, gidx, chan = [], [], []
    for k in range(p.A, p.N):
        if k >= p.A + 1:
            parts.append(y.values[k])
            gidx.extend([k] * p.n)
            chan.extend(range(p.n))
        parts.append(u[k - p.A])
        gidx.extend([k] * p.m)
        chan.extend(range(p.n, p.n + p.m))
        parts.append(lam[k - p.A])
        gidx.extend([k] * p.n)
        chan.extend(range(p.n + p.m, 2 * p.n + p.m))
    return (np.concatenate(parts), np.asarray(gidx, dtype=int),
            np.asarray(chan, dtype=int))


def _unpack(p: ControlProblem, z):
    n, m, A, N = p.n, p.m, p.A, p.N
    ns = N - A
    interior = np.empty((N - 1 - A, n))
    u = np.empty((ns, m))
    lam = np.empty((ns, n))
    pos = 0
    for k in range(A, N):
        if k >= A + 1:
            interior[k - A - 1] = z[pos:pos + n]
            pos += n
        u[k - A] = z[pos:pos + m]
        pos += m
        lam[k - A] = z[pos:pos + n]
        pos += n
    return p.make_state(interior), u, lam


def solve_oc(p: ControlProblem, guess=None,
             opts: SolverOptions | None = None) -> ControlSolution:
    """Newton iteration on the stationarity system of the augmented index.

    For linear dynamics with quadratic cost the system is linear, so the
    iteration converges in a single Newton step up to finite-difference
    rounding in the Jacobian.
    """
    if guess is None:
        guess = initial_guess(p)
    y0, u0, lam0 = guess
    u0 = np.asarray(u0, dtype=float).reshape(-1, p.m)
    lam0 = np.asarray(lam0, dtype=float).reshape(-1, p.n)
    p.check_shapes(y0, u0, lam0)
    z0, gidx, chan = _pack(p, y0, u0, lam0)

    def grad_fn(z):
        y, u, lam = _unpack(p, z)
        try:
            ds, dc, da = stationarity_gradient(p, y, u, lam)
        except NonFiniteLagrangian:
            return np.full(len(z), np.inf)
        out = np.empty(len(z))
        pos = 0
        for k in range(p.A, p.N):
            if k >= p.A + 1:
                out[pos:pos + p.n] = ds[k - p.A - 1]
                pos += p.n
            out[pos:pos + p.m] = dc[k - p.A]
            pos += p.m
            out[pos:pos + p.n] = da[k - p.A]
            pos += p.n
        return out

    structure = BandStructure(grid_index=gidx, channel=chan, width=p.alpha0 + 2)
    try:
        z, iters, gnorm = newton_solve(grad_fn, z0, opts, structure)
    except Exception as err:
        if hasattr(err, "best") and err.best is not None:
            err.best = _unpack(p, np.asarray(err.best))
        raise
    y, u, lam = _unpack(p, z)
    return ControlSolution(y, u, lam, oc_residuals(p, y, u, lam), iters, gnorm)
