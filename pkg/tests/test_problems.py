import math

import numpy as np
import pytest

from tsvar import (BadRange, discrete_action, el_residuals, limit_sweep,
                   quantum_lq, solve_el, solve_oc)
from tsvar.problems import CATALOG, SweepReport, two_point_fit


def test_parameter_validation():
    with pytest.raises(BadRange):
        discrete_action(a=0, b=3, d=3)          # needs a < b - d
    with pytest.raises(BadRange):
        discrete_action(a=5, b=5, d=0)
    with pytest.raises(BadRange):
        discrete_action(a=0, b=8, d=1, h=0.0)
    with pytest.raises(BadRange):
        quantum_lq(alpha=2, beta=2, alpha0=1, q=0.5, r=1.0)   # alpha0+beta >= alpha+1
    with pytest.raises(BadRange):
        quantum_lq(alpha=5, beta=0, alpha0=1, q=1.5, r=1.0)
    with pytest.raises(BadRange):
        quantum_lq(alpha=5, beta=0, alpha0=1, q=0.5, r=-1.0)


def test_lattice_geometry():
    p = discrete_action(a=0, b=12, d=2, h=1.0)
    assert p.N + 1 == 15
    assert p.A == 2
    assert p.grid.points[0] == -2.0 and p.grid.points[-1] == 12.0
    assert p.grid.points[p.A] == 0.0


def test_second_difference_form_on_quadratic_potential():
    # the delayed-region equation must algebraically equal
    # y_i - 2 y_{i-1} + y_{i-2} + V'(y_{i-1}) on the unit lattice, for any
    # trajectory, when V is the default quadratic
    rng = np.random.default_rng(19)
    p = discrete_action(a=0, b=10, d=2, h=1.0)
    for _ in range(5):
        y = p.make_trajectory(rng.standard_normal((p.N - 1 - p.A, 1)))
        rep = el_residuals(p, y)
        vals = y.values[:, 0]
        for row, i in zip(rep.delayed, rep.delayed_indices):
            expected = vals[i] - 2 * vals[i - 1] + vals[i - 2] + vals[i - 1]
            assert row[0] == pytest.approx(expected, rel=1e-12, abs=1e-12)
        for row, i in zip(rep.tail, rep.tail_indices):
            expected = vals[i] - 2 * vals[i - 1] + vals[i - 2]
            assert row[0] == pytest.approx(expected, rel=1e-12, abs=1e-12)


def test_zero_potential_line_is_stationary():
    # boundary data on a global line: the line solves the equations
    p = discrete_action(a=0, b=9, d=2, h=1.0, V=lambda w: 0.0,
                        V_prime=lambda w: 0.0, phi=lambda t: 0.5 * t + 1.0,
                        c0=0.5 * 9.0 + 1.0)
    line = 0.5 * p.grid.points + 1.0
    y = p.make_trajectory(line[p.A + 1:p.N])
    rep = el_residuals(p, y)
    assert rep.max_equation_residual() <= 1e-12
    sol = solve_el(p, y)
    assert sol.iterations == 0


def test_delay_removed_gives_classical_equations():
    rng = np.random.default_rng(23)
    p = discrete_action(a=0, b=8, d=0, h=1.0)
    y = p.make_trajectory(rng.standard_normal((p.N - 1, 1)))
    rep = el_residuals(p, y)
    assert rep.tail_indices.size == 0
    vals = y.values[:, 0]
    # classical lattice equations: second difference plus V'(previous value)
    for row, i in zip(rep.delayed, rep.delayed_indices):
        classical = vals[i] - 2 * vals[i - 1] + vals[i - 2] + vals[i - 1]
        assert abs(row[0] - classical) <= 1e-13 * max(1.0, abs(classical))


def test_small_lattice_matches_defect_minimization():
    from scipy.optimize import least_squares

    from tsvar import evaluate_functional

    p = discrete_action(a=0, b=8, d=1, h=1.0)
    sol = solve_el(p, p.initial_trajectory())
    nfree = p.N - 1 - p.A

    def fd_grad(z):
        g = np.empty(nfree)
        for j in range(nfree):
            eps = 1e-6
            zp, zm = z.copy(), z.copy()
            zp[j] += eps
            zm[j] -= eps
            g[j] = (evaluate_functional(p, p.make_trajectory(zp))
                    - evaluate_functional(p, p.make_trajectory(zm))) / (2 * eps)
        return g

    oracle = least_squares(fd_grad, np.zeros(nfree), xtol=1e-15, ftol=1e-15,
                           gtol=1e-15)
    assert np.max(np.abs(oracle.x - sol.y.values[p.A + 1:p.N, 0])) <= 1e-6


def test_quantum_catalog_satisfies_printed_conditions():
    p = quantum_lq(alpha=5, beta=0, alpha0=1, q=0.5, r=1.0)
    sol = solve_oc(p)
    # adjoint equals control at every sample
    assert np.max(np.abs(sol.lam - sol.u)) <= 1e-10
    # tail: rate of the shifted adjoint balances r times its value, with no
    # state forcing
    lam = sol.lam[:, 0]
    nu = p.grid.nu
    N, A = p.N, p.A
    tail = (lam[N - 1 - A] - lam[N - 2 - A]) / nu[N] - 1.0 * lam[N - 1 - A]
    assert abs(tail) <= 1e-10
    # delayed region carries the state forcing q^(-a0) * y(q x)
    vals = sol.y.values[:, 0]
    for i in range(A + 2, N - p.alpha0 + 1):
        lhs = (lam[i - 1 - A] - lam[i - 2 - A]) / nu[i]
        rhs = 1.0 * lam[i - 1 - A] + 2.0 * vals[i - 1]
        assert abs(lhs - rhs) <= 1e-10


def test_catalog_determinism():
    p1 = discrete_action(a=0, b=12, d=2)
    p2 = discrete_action(a=0, b=12, d=2)
    s1 = solve_el(p1, p1.initial_trajectory())
    s2 = solve_el(p2, p2.initial_trajectory())
    assert np.array_equal(s1.y.values, s2.y.values)

    c1 = solve_oc(quantum_lq(alpha=5, beta=0, alpha0=1, q=0.5, r=1.0))
    c2 = solve_oc(quantum_lq(alpha=5, beta=0, alpha0=1, q=0.5, r=1.0))
    assert np.array_equal(c1.y.values, c2.y.values)
    assert np.array_equal(c1.u, c2.u)
    assert np.array_equal(c1.lam, c2.lam)


def test_limit_sweep_constant_family():
    entry = CATALOG["discrete_action"]
    params = {"a": 0, "b": 8, "d": 0, "h": 1.0,
              "V": lambda w: 0.0, "V_prime": lambda w: 0.0,
              "phi": lambda t: 2.0, "c0": 2.0}
    report = limit_sweep(entry, params, [(1.0, 1.0, 8), (1.0, 0.5, 16),
                                         (1.0, 0.25, 32)])
    assert all(lv.error is None for lv in report.levels)
    assert all(lv.deviation <= 1e-12 for lv in report.levels)


def test_limit_sweep_quantum_converges():
    entry = CATALOG["quantum_lq"]
    params = {"alpha": 0, "beta": 0, "alpha0": 0, "q": 0.5, "r": 1.0,
              "phi": 1.0, "c": 0.0}
    levels = []
    for k in range(4, 7):
        q = 1.0 - 2.0 ** -k
        levels.append((q, 0.0, max(1, round(math.log(0.5) / math.log(q)))))
    report = limit_sweep(entry, params, levels)
    assert report.verdict == "converging"
    devs = report.deviations
    assert all(b < a for a, b in zip(devs, devs[1:]))


def test_limit_sweep_empty_and_failures():
    entry = CATALOG["quantum_lq"]
    report = limit_sweep(entry, {}, [])
    assert report.levels == [] and report.verdict == "insufficient levels"

    # a level violating the family's refinement contract is recorded, not raised
    report = limit_sweep(entry, {"alpha0": 0, "alpha": 0}, [(0.9375, 1.0, 11)])
    assert report.levels[0].error is not None
    assert report.verdict == "insufficient levels"


def test_two_point_fit_collocates():
    basis = (lambda x: math.exp(x), lambda x: math.exp(-x))
    c = two_point_fit(basis, (0.0, 1.0), (2.0, 3.0))
    assert c[0] * basis[0](0.0) + c[1] * basis[1](0.0) == pytest.approx(2.0)
    assert c[0] * basis[0](1.0) + c[1] * basis[1](1.0) == pytest.approx(3.0)
