"""Built-in problem families and continuum-limit sweep utilities."""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import BadRange, TsvarError
from .nabla_calc import GridFunction
from .optimal_control import (ControlLagrangian, ControlProblem, Dynamics,
                              solve_oc)
from .solvers import SolverOptions
from .timescale import TimeScaleSpec, build_grid
from .variational import DelayedLagrangian, Trajectory, VariationalProblem, solve_el


def _prehistory_rows(phi, grid, count, n=1):
    """Materialize prehistory rows from a constant, callable, or array."""
    if callable(phi):
        return np.array([np.atleast_1d(phi(t)) for t in grid.points[:count]],
                        dtype=float)
    arr = np.asarray(phi, dtype=float)
    if arr.ndim == 0:
        return np.full((count, n), float(arr))
    return arr


def discrete_action(a: int, b: int, d: int, h: float = 1.0,
                    V: Optional[Callable[[float], float]] = None,
                    V_prime: Optional[Callable[[float], float]] = None,
                    phi=1.0, c0=0.0) -> VariationalProblem:
    """Kinetic-minus-potential action on the arithmetic lattice with delay.

    The running term is half the squared rate minus a potential of the
    delayed state, integrated over (a*h, b*h] on the step-h lattice.  The
    grid extends down to (a-d)*h so the delayed argument stays on-grid.
    Defaults to the quadratic potential V(w) = w^2/2.
    """
    if not (a < b - d < b) and d > 0:
        raise BadRange(f"need a < b-d < b, got a={a}, b={b}, d={d}")
    if d == 0 and not a < b:
        raise BadRange(f"need a < b, got a={a}, b={b}")
    if d < 0:
        raise BadRange(f"delay must be nonnegative, got {d}")
    if h <= 0:
        raise BadRange(f"step must be positive, got {h}")
    if V is None:
        V = lambda w: 0.5 * w * w
        V_prime = lambda w: w
    if V_prime is None:
        raise BadRange("a potential needs its derivative alongside")

    spec = TimeScaleSpec(1.0, h)
    grid = build_grid(spec, b * h, b - a + d)

    lag = DelayedLagrangian(
        eval=lambda x, v1, v2, v3, v4: 0.5 * float(v2 @ v2) - V(float(v3[0])),
        d1=lambda x, v1, v2, v3, v4: np.zeros(1),
        d2=lambda x, v1, v2, v3, v4: np.asarray(v2, dtype=float),
        d3=lambda x, v1, v2, v3, v4: np.array([-V_prime(float(v3[0]))]),
        d4=lambda x, v1, v2, v3, v4: np.zeros(1))

    return VariationalProblem(grid, 1, d, _prehistory_rows(phi, grid, d + 1),
                              c0, lag)


def quantum_lq(alpha: int, beta: int, alpha0: int, q: float, r: float,
               phi=1.0, c=0.0) -> ControlProblem:
    """Linear-quadratic control on the geometric lattice with delayed cost.

    The state decays at rate r and is steered by the control; the cost is
    half the squared delayed state plus half the squared control.  The
    horizon is q**beta and the integration range starts at q**(alpha+1).
    """
    if not (0.0 < q < 1.0):
        raise BadRange(f"need 0 < q < 1, got {q}")
    if not alpha0 + beta < alpha + 1:
        raise BadRange(
            f"need alpha0 + beta < alpha + 1, got alpha0={alpha0}, "
            f"beta={beta}, alpha={alpha}")
    if r <= 0:
        raise BadRange(f"decay rate must be positive, got {r}")

    spec = TimeScaleSpec(q, 0.0)
    steps = alpha + 1 + alpha0 - beta
    grid = build_grid(spec, q ** beta, steps)

    lag = ControlLagrangian(
        eval=lambda x, yp, up, yd, rd: 0.5 * float(yd @ yd + up @ up),
        d_y=lambda x, yp, up, yd, rd: np.zeros(1),
        d_u=lambda x, yp, up, yd, rd: np.asarray(up, dtype=float),
        d_ydel=lambda x, yp, up, yd, rd: np.asarray(yd, dtype=float),
        d_ratedel=lambda x, yp, up, yd, rd: np.zeros(1))
    dyn = Dynamics(
        eval=lambda x, yp, up: -r * np.asarray(yp, dtype=float) + np.asarray(up, dtype=float),
        d_state=lambda x, yp, up: np.array([[-r]]),
        d_control=lambda x, yp, up: np.array([[1.0]]))

    return ControlProblem(grid, 1, 1, alpha0, _prehistory_rows(phi, grid, alpha0 + 1),
                          c, lag, dyn)


def reduction_residuals(y: Trajectory, r: float, q_weighted: bool = True) -> np.ndarray:
    """Second-order difference defect of a delay-free quantum LQ state.

    Checks, at indices 2..N,

        D2y_i + r*q*Dy_{i-1} - s*(r^2+1)*y_{i-1} - s*r*Dy_i

    with s = q for the q-weighted variant and s = 1 otherwise.  Stationary
    trajectories of the discrete augmented index satisfy the unweighted
    variant exactly; the two variants coincide as q -> 1.
    """
    vals = y.values[:, 0]
    nu = y.grid.nu
    q = y.grid.spec.q
    Dy = (vals[1:] - vals[:-1]) / nu[1:]          # Dy[i-1] is the rate at t_i
    D2y = (Dy[1:] - Dy[:-1]) / nu[2:]             # D2y[i-2] at t_i
    s = q if q_weighted else 1.0
    i = np.arange(2, len(vals))
    return (D2y + r * q * Dy[i - 2] - s * (r * r + 1.0) * vals[i - 1]
            - s * r * Dy[i - 1])


@dataclass(frozen=True)
class CatalogEntry:
    """A named problem family with defaults and refinement support."""

    name: str
    kind: str                      # "variational" | "control"
    defaults: dict
    build: Callable[[dict], object]
    refine: Callable[[dict, float, float, int], dict]
    limit_basis: Callable[[dict], tuple]


def _build_discrete_action(params: dict):
    return discrete_action(**params)


def _refine_discrete_action(params: dict, q: float, h: float, steps: int) -> dict:
    if q != 1.0:
        raise BadRange("lattice family refines with q = 1 only")
    out = dict(params)
    out["h"] = h
    out["b"] = out.get("a", 0) + steps - out.get("d", 0)
    return out


def _basis_linear(params: dict):
    return (lambda x: 1.0, lambda x: x)


def _build_quantum_lq(params: dict):
    return quantum_lq(**params)


def _refine_quantum_lq(params: dict, q: float, h: float, steps: int) -> dict:
    if h != 0.0:
        raise BadRange("quantum family refines with h = 0 only")
    if not (0.0 < q < 1.0):
        raise BadRange(f"refinement needs 0 < q < 1, got {q}")
    out = dict(params)
    out["q"] = q
    out["alpha"] = steps - 1 - params.get("alpha0", 0) + params.get("beta", 0)
    return out


def _basis_exp(params: dict):
    kappa = float(np.sqrt(params.get("r", 1.0) ** 2 + 1.0))
    return (lambda x: np.exp(kappa * x), lambda x: np.exp(-kappa * x))


CATALOG = {
    "discrete_action": CatalogEntry(
        name="discrete_action",
        kind="variational",
        defaults={"a": 0, "b": 12, "d": 2, "h": 1.0, "phi": 1.0, "c0": 0.0},
        build=_build_discrete_action,
        refine=_refine_discrete_action,
        limit_basis=_basis_linear),
    "quantum_lq": CatalogEntry(
        name="quantum_lq",
        kind="control",
        defaults={"alpha": 5, "beta": 0, "alpha0": 1, "q": 0.5, "r": 1.0,
                  "phi": 1.0, "c": 0.0},
        build=_build_quantum_lq,
        refine=_refine_quantum_lq,
        limit_basis=_basis_exp),
}


@dataclass(frozen=True)
class SweepLevel:
    q: float
    h: float
    steps: int
    deviation: Optional[float]
    error: Optional[str] = None


@dataclass(frozen=True)
class SweepReport:
    levels: list
    verdict: str

    @property
    def deviations(self):
        return [lv.deviation for lv in self.levels if lv.error is None]


def two_point_fit(basis, xs, ys):
    """Coefficients of c1*f1 + c2*f2 through two collocation points."""
    f1, f2 = basis
    M = np.array([[f1(xs[0]), f2(xs[0])], [f1(xs[1]), f2(xs[1])]], dtype=float)
    return np.linalg.solve(M, np.asarray(ys, dtype=float))


def limit_sweep(entry: CatalogEntry, params: dict, refinements,
                probe=None, opts: SolverOptions | None = None) -> SweepReport:
    """Solve the family at each refinement and measure the distance to the
    two-point continuum fit.

    Each level is solved independently; solver failures are recorded on
    the level rather than aborting the sweep.  The fit collocates the
    family's continuum basis at the probe points (grid endpoints unless
    given), and the deviation is the sup over the grid of the gap between
    the solved state and the fit.
    """
    merged = dict(entry.defaults)
    merged.update(params)
    levels = []
    for (q, h, steps) in refinements:
        try:
            level_params = entry.refine(merged, q, h, steps)
            problem = entry.build(level_params)
            if entry.kind == "control":
                y = solve_oc(problem, opts=opts).y
            else:
                y = solve_el(problem, problem.initial_trajectory(), opts).y
            levels.append(SweepLevel(q, h, steps, _fit_deviation(
                entry.limit_basis(level_params), y, probe)))
        except (TsvarError, np.linalg.LinAlgError) as err:
            levels.append(SweepLevel(q, h, steps, None, error=str(err)))
    good = [lv.deviation for lv in levels if lv.error is None]
    if len(good) < 2:
        verdict = "insufficient levels"
    elif all(b < a for a, b in zip(good, good[1:])):
        verdict = "converging"
    else:
        verdict = "not monotone"
    return SweepReport(levels, verdict)


def _fit_deviation(basis, y: GridFunction, probe) -> float:
    t = y.grid.points
    vals = y.values[:, 0]
    if probe is None:
        xs = (t[0], t[-1])
        ys = (vals[0], vals[-1])
    else:
        xs = tuple(probe)
        ys = tuple(np.interp(np.asarray(xs, dtype=float), t, vals))
    c = two_point_fit(basis, xs, ys)
    f1, f2 = basis
    fit = c[0] * np.array([f1(x) for x in t]) + c[1] * np.array([f2(x) for x in t])
    return float(np.max(np.abs(vals - fit)))
