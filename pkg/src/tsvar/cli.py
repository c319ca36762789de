"""Command-line front door.

Subcommands: grid, solve-el, solve-oc, residuals, limit-sweep.
Exit codes: 0 success, 1 validation failure, 2 solver non-convergence
(a report with partial data is still written).
"""

import argparse
import csv
import json
import math
import sys

import numpy as np

from .config import ConfigError, build_problem, load_config, solver_options
from .errors import NoConvergence, TsvarError
from .nabla_calc import GridFunction
from .optimal_control import oc_residuals, performance_index, solve_oc
from .problems import CATALOG, limit_sweep
from .timescale import TimeScaleSpec, build_grid
from .variational import el_residuals, evaluate_functional, solve_el


def main(argv=None) -> int:
    parser = _make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, TsvarError) as err:
        print(str(err), file=sys.stderr)
        return 1


def _make_parser():
    p = argparse.ArgumentParser(prog="tsvar")
    sub = p.add_subparsers(required=True)

    g = sub.add_parser("grid", help="print a grid table")
    g.add_argument("--q", type=float, required=True)
    g.add_argument("--h", type=float, required=True)
    g.add_argument("--b", type=float, required=True)
    g.add_argument("--steps", type=int, required=True)
    g.set_defaults(func=cmd_grid)

    for name, func in (("solve-el", cmd_solve), ("solve-oc", cmd_solve)):
        s = sub.add_parser(name, help=f"run {name} on a config")
        s.add_argument("--config", required=True)
        s.add_argument("--output", required=True)
        s.add_argument("--csv")
        s.set_defaults(func=func, command=name)

    r = sub.add_parser("residuals", help="evaluate residuals of a stored trajectory")
    r.add_argument("--config", required=True)
    r.add_argument("--trajectory", required=True)
    r.set_defaults(func=cmd_residuals)

    ls = sub.add_parser("limit-sweep", help="refinement sweep toward the continuum")
    ls.add_argument("--config", required=True)
    ls.add_argument("--q-list", required=True,
                    help="comma-separated scale factors in (0, 1)")
    ls.add_argument("--output", required=True)
    ls.set_defaults(func=cmd_limit_sweep)
    return p


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def cmd_grid(args) -> int:
    spec = TimeScaleSpec(args.q, args.h)
    grid = build_grid(spec, args.b, args.steps)
    print("index point nu")
    for j, (t, nu_j) in enumerate(zip(grid.points, grid.nu)):
        print(f"{j} {_fmt(t)} {_fmt(nu_j)}")
    return 0


def cmd_solve(args) -> int:
    cfg = load_config(args.config)
    kind, problem = build_problem(cfg)
    want = "variational" if args.command == "solve-el" else "control"
    if kind != want:
        raise ConfigError(
            f"config defines a {kind} problem; use "
            f"{'solve-el' if kind == 'variational' else 'solve-oc'}")
    opts = solver_options(cfg)

    converged = True
    if kind == "variational":
        try:
            sol = solve_el(problem, problem.initial_trajectory(), opts)
            y, iters, gnorm = sol.y, sol.iterations, sol.gradient_norm
        except NoConvergence as err:
            converged, y = False, err.best
            iters, gnorm = err.iterations, err.gradient_norm
        report = el_residuals(problem, y)
        functional = evaluate_functional(problem, y)
        u = lam = None
    else:
        try:
            sol = solve_oc(problem, opts=opts)
            y, u, lam = sol.y, sol.u, sol.lam
            iters, gnorm = sol.iterations, sol.gradient_norm
        except NoConvergence as err:
            converged = False
            y, u, lam = err.best
            iters, gnorm = err.iterations, err.gradient_norm
        report = oc_residuals(problem, y, u, lam)
        functional = performance_index(problem, y, u)

    doc = {
        "command": args.command,
        "config": cfg,
        "converged": converged,
        "iterations": iters,
        "gradient_norm": gnorm,
        "functional": functional,
        "residuals": report.norms(),
        "residual_max": report.max_equation_residual(),
        "trajectory": _table(problem, y, u, lam),
    }
    with open(args.output, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")
    if args.csv:
        _write_csv(args.csv, problem, y, u, lam)
    return 0 if converged else 2


def _table(problem, y, u, lam) -> dict:
    n = problem.n
    columns = ["index", "t", "nu"] + [f"y_{j + 1}" for j in range(n)]
    m = getattr(problem, "m", None)
    if u is not None:
        columns += [f"u_{j + 1}" for j in range(m)]
        columns += [f"lambda_{j + 1}" for j in range(n)]
    rows = []
    A, N = problem.A, problem.N
    for j in range(N + 1):
        row = [j, float(problem.grid.points[j]), float(problem.grid.nu[j])]
        row += [float(v) for v in y.values[j]]
        if u is not None:
            if A <= j <= N - 1:
                row += [float(v) for v in u[j - A]]
                row += [float(v) for v in lam[j - A]]
            else:
                row += [None] * (m + n)
        rows.append(row)
    return {"columns": columns, "rows": rows}


def _write_csv(path, problem, y, u=None, lam=None):
    table = _table(problem, y, u, lam)
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(table["columns"])
        for row in table["rows"]:
            w.writerow([("" if v is None else (_fmt(v) if isinstance(v, float) else v))
                        for v in row])


def _read_csv(path, problem, with_controls: bool):
    n = problem.n
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        rows = list(reader)
    if header is None:
        raise ConfigError(f"trajectory file {path} is empty")
    if len(rows) != problem.N + 1:
        raise ConfigError(
            f"trajectory has {len(rows)} rows, grid needs {problem.N + 1}")
    try:
        ycols = [header.index(f"y_{j + 1}") for j in range(n)]
        values = np.array([[float(r[c]) for c in ycols] for r in rows])
        u = lam = None
        if with_controls:
            m = problem.m
            ucols = [header.index(f"u_{j + 1}") for j in range(m)]
            lcols = [header.index(f"lambda_{j + 1}") for j in range(n)]
            A, N = problem.A, problem.N
            u = np.array([[float(rows[k][c]) for c in ucols] for k in range(A, N)])
            lam = np.array([[float(rows[k][c]) for c in lcols] for k in range(A, N)])
    except (ValueError, IndexError) as err:
        raise ConfigError(f"malformed trajectory file {path}: {err}") from err
    return GridFunction(problem.grid, values), u, lam


def cmd_residuals(args) -> int:
    cfg = load_config(args.config)
    kind, problem = build_problem(cfg)
    y, u, lam = _read_csv(args.trajectory, problem, with_controls=(kind == "control"))
    if kind == "variational":
        report = el_residuals(problem, y)
    else:
        report = oc_residuals(problem, y, u, lam)
    for name, norms in report.norms().items():
        print(f"{name}: max={norms['max']:.17g} rms={norms['rms']:.17g}")
    print(f"overall_max={report.max_equation_residual():.17g}")
    return 0


def cmd_limit_sweep(args) -> int:
    cfg = load_config(args.config)
    if "catalog" not in cfg or cfg["catalog"]["name"] != "quantum_lq":
        raise ConfigError("limit-sweep supports the quantum_lq catalog family")
    entry = CATALOG["quantum_lq"]
    params = dict(entry.defaults)
    params.update(cfg["catalog"].get("params", {}))

    try:
        qs = [float(s) for s in args.q_list.split(",") if s.strip()]
    except ValueError as err:
        raise ConfigError(f"bad q-list: {err}") from err
    if not qs:
        raise ConfigError("q-list is empty")
    for q in qs:
        if not (0.0 < q < 1.0):
            raise ConfigError(f"q-list values must lie in (0, 1), got {q}")

    # each level re-grids the family's own range [q0^(alpha+1), q0^beta]
    a_target = params["q"] ** (params["alpha"] + 1)
    levels = []
    for q in qs:
        depth = max(1, round(math.log(a_target) / math.log(q)))
        steps = depth + params["alpha0"] - params["beta"]
        levels.append((q, 0.0, int(steps)))

    report = limit_sweep(entry, params, levels, opts=solver_options(cfg))
    doc = {
        "command": "limit-sweep",
        "config": cfg,
        "levels": [{"q": lv.q, "h": lv.h, "steps": lv.steps,
                    "deviation": lv.deviation, "error": lv.error}
                   for lv in report.levels],
        "verdict": report.verdict,
    }
    with open(args.output, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")
    print(report.verdict)
    if report.levels and all(lv.error is not None for lv in report.levels):
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
