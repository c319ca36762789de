"""Variational and optimal-control solvers for delayed problems on
backward-jump time scales rho(t) = q*t - h."""

from .errors import (BadRange, BadVariation, DegenerateGrid, EvalDomainError,
                     GridMismatch, IndexUnderflow, NoConvergence,
                     NonFiniteLagrangian, NotAMember, ShapeMismatch,
                     SingularSystem, TooFewPoints, TsvarError)
from .nabla_calc import (GridFunction, delayed_nabla, nabla_derivative,
                         nabla_integral, product_rule_residual)
from .optimal_control import (ControlLagrangian, ControlProblem,
                              ControlResidualReport, ControlSolution,
                              Dynamics, augmented_index, initial_guess,
                              oc_residuals, performance_index, solve_oc)
from .problems import (CATALOG, CatalogEntry, SweepLevel, SweepReport,
                       discrete_action, limit_sweep, quantum_lq,
                       reduction_residuals)
from .solvers import SolverOptions
from .timescale import (Grid, TimeScaleSpec, build_grid, locate, nu, rho,
                        rho_iter, sigma)
from .variational import (DelayedLagrangian, ELSolution, ResidualReport,
                          Trajectory, VariationalProblem, el_residuals,
                          evaluate_functional, first_variation,
                          functional_gradient, solve_el)

__version__ = "0.1.0"
