"""Problem-config loading and validation for the command-line tools.

Configs are JSON documents with a fixed field tree; unknown keys are
rejected rather than ignored, so a typo never silently changes a run.
Exactly one of an explicit `lagrangian` or a `catalog` reference must be
present.  Expression fields use the language of `tsvar.expr`.
"""

import json

import numpy as np

from . import expr as ex
from .errors import TsvarError
from .optimal_control import ControlLagrangian, ControlProblem, Dynamics
from .problems import CATALOG
from .solvers import SolverOptions
from .timescale import TimeScaleSpec, build_grid
from .variational import DelayedLagrangian, VariationalProblem

#: Default tolerance for config-driven solves.  Expression-defined
#: integrands differentiate by finite differences, whose noise floor sits
#: near 1e-9; the library-level default of 1e-10 stays available through
#: the solver.tol field.
CONFIG_DEFAULT_TOL = 1e-8


class ConfigError(TsvarError):
    """The config file is malformed or internally inconsistent."""


_SCHEMA = {
    "timescale": {"q", "h"},
    "grid": {"b", "steps"},
    "delay": {"alpha0"},
    "state": {"n"},
    "control": {"m", "dynamics"},
    "solver": {"tol", "max_iter"},
    "catalog": {"name", "params"},
}
_ROOT_KEYS = {"timescale", "grid", "delay", "state", "control", "lagrangian",
              "prehistory", "endpoint", "solver", "catalog", "params"}


def load_config(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            cfg = json.load(f)
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be an object")
    _check_keys(cfg, _ROOT_KEYS, "top level")
    for section, allowed in _SCHEMA.items():
        if section in cfg:
            if not isinstance(cfg[section], dict):
                raise ConfigError(f"section '{section}' must be an object")
            _check_keys(cfg[section], allowed, f"section '{section}'")
    has_catalog = "catalog" in cfg
    has_lagrangian = "lagrangian" in cfg
    if has_catalog == has_lagrangian:
        raise ConfigError(
            "config must give exactly one of 'lagrangian' or 'catalog'")
    if has_catalog:
        extra = set(cfg) - {"catalog", "solver"}
        if extra:
            raise ConfigError(
                f"catalog configs allow only 'catalog' and 'solver', "
                f"found {sorted(extra)}")
        if "name" not in cfg["catalog"]:
            raise ConfigError("catalog section needs a 'name'")
    else:
        for required in ("timescale", "grid", "delay", "state", "prehistory",
                         "endpoint"):
            if required not in cfg:
                raise ConfigError(f"explicit config missing section '{required}'")
    return cfg


def _check_keys(d, allowed, where):
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)} in {where}")


def solver_options(cfg: dict) -> SolverOptions:
    section = cfg.get("solver", {})
    return SolverOptions(tol=float(section.get("tol", CONFIG_DEFAULT_TOL)),
                         max_iter=int(section.get("max_iter", 100)))


def build_problem(cfg: dict):
    """Returns (kind, problem) with kind 'variational' or 'control'."""
    if "catalog" in cfg:
        return _build_from_catalog(cfg["catalog"])
    return _build_explicit(cfg)


def _build_from_catalog(section: dict):
    name = section["name"]
    entry = CATALOG.get(name)
    if entry is None:
        raise ConfigError(
            f"unknown catalog entry '{name}'; available: {sorted(CATALOG)}")
    params = dict(entry.defaults)
    user = section.get("params", {})
    if not isinstance(user, dict):
        raise ConfigError("catalog params must be an object")
    unknown = set(user) - set(entry.defaults) - {"V"}
    if unknown:
        raise ConfigError(f"unknown catalog params {sorted(unknown)} for '{name}'")
    params.update(user)
    params = _coerce_catalog_params(name, params)
    try:
        problem = entry.build(params)
    except TsvarError as err:
        raise ConfigError(f"catalog '{name}': {err}") from err
    return entry.kind, problem


def _coerce_catalog_params(name: str, params: dict) -> dict:
    out = dict(params)
    phi = out.get("phi")
    if isinstance(phi, str):
        node = ex.parse(phi, {"x"})
        out["phi"] = lambda t: ex.evaluate(node, {"x": t})
    if name == "discrete_action" and isinstance(out.get("V"), str):
        node = ex.parse(out["V"], {"w"})

        def V(w):
            return ex.evaluate(node, {"w": w})

        def V_prime(w):
            s = 1e-6 * max(1.0, abs(w))
            return (V(w + s) - V(w - s)) / (2.0 * s)

        out["V"] = V
        out["V_prime"] = V_prime
    return out


def _expr_list(raw, count, what):
    """Normalize a string or list of strings to `count` expression sources."""
    if isinstance(raw, str):
        if count != 1:
            raise ConfigError(f"{what} needs {count} expressions, got one")
        return [raw]
    if isinstance(raw, list) and all(isinstance(s, str) for s in raw):
        if len(raw) != count:
            raise ConfigError(f"{what} needs {count} expressions, got {len(raw)}")
        return raw
    raise ConfigError(f"{what} must be an expression string or list of them")


def _build_explicit(cfg: dict):
    try:
        spec = TimeScaleSpec(float(cfg["timescale"]["q"]), float(cfg["timescale"]["h"]))
        steps = int(cfg["grid"]["steps"])
        alpha0 = int(cfg["delay"]["alpha0"])
        n = int(cfg["state"]["n"])
    except (KeyError, TypeError, ValueError) as err:
        raise ConfigError(f"bad scalar field: {err}") from err
    if n < 1:
        raise ConfigError(f"state dimension must be positive, got {n}")
    if alpha0 < 0:
        raise ConfigError(f"delay must be nonnegative, got {alpha0}")
    if steps - alpha0 < alpha0 + 1:
        raise ConfigError("delay exceeds grid")
    grid = build_grid(spec, float(cfg["grid"]["b"]), steps)

    params = cfg.get("params", {})
    if not isinstance(params, dict) or not all(
            isinstance(v, (int, float)) for v in params.values()):
        raise ConfigError("'params' must map names to numbers")
    pnames = set(params)

    phi = _prehistory_values(cfg["prehistory"], grid, alpha0, n, params)
    endpoint = np.atleast_1d(np.asarray(cfg["endpoint"], dtype=float))
    if endpoint.shape != (n,):
        raise ConfigError(f"endpoint must list {n} values")

    is_control = "control" in cfg
    if is_control:
        m = int(cfg["control"]["m"])
        if m < 1:
            raise ConfigError(f"control dimension must be positive, got {m}")
        dyn_src = _expr_list(cfg["control"]["dynamics"], n, "dynamics")
        lag = _control_lagrangian(cfg["lagrangian"], n, m, params)
        dynamics = _dynamics(dyn_src, n, m, params)
        problem = ControlProblem(grid, n, m, alpha0, phi, endpoint, lag, dynamics)
        return "control", problem

    lag = _variational_lagrangian(cfg["lagrangian"], n, params)
    problem = VariationalProblem(grid, n, alpha0, phi, endpoint, lag)
    return "variational", problem


def _prehistory_values(raw, grid, alpha0, n, params):
    if isinstance(raw, (str, list)) and (
            isinstance(raw, str) or all(isinstance(s, str) for s in raw)):
        sources = _expr_list(raw, n, "prehistory")
        nodes = [ex.parse(s, {"x"} | set(params)) for s in sources]
        return np.array([[ex.evaluate(node, {"x": t, **params}) for node in nodes]
                         for t in grid.points[:alpha0 + 1]])
    arr = np.asarray(raw, dtype=float)
    if arr.ndim == 0:
        return np.full((alpha0 + 1, n), float(arr))
    if arr.ndim == 1 and n == 1:
        arr = arr[:, None]
    if arr.shape != (alpha0 + 1, n):
        raise ConfigError(
            f"prehistory must give {alpha0 + 1} rows of {n} values, "
            f"got shape {arr.shape}")
    return arr


def _state_names(n):
    return [f"y{j + 1}" for j in range(n)]


def _variational_lagrangian(source, n, params) -> DelayedLagrangian:
    if not isinstance(source, str):
        raise ConfigError("lagrangian must be an expression string")
    names = (["x"] + _state_names(n)
             + [f"Dy{j + 1}" for j in range(n)]
             + [f"yd{j + 1}" for j in range(n)]
             + [f"Dyd{j + 1}" for j in range(n)])
    node = ex.parse(source, set(names) | set(params))

    def evaluate(x, v1, v2, v3, v4):
        b = dict(params)
        b["x"] = x
        for j in range(n):
            b[f"y{j + 1}"] = v1[j]
            b[f"Dy{j + 1}"] = v2[j]
            b[f"yd{j + 1}"] = v3[j]
            b[f"Dyd{j + 1}"] = v4[j]
        return ex.evaluate(node, b)

    return DelayedLagrangian(eval=evaluate)


def _control_lagrangian(source, n, m, params) -> ControlLagrangian:
    if not isinstance(source, str):
        raise ConfigError("lagrangian must be an expression string")
    names = (["x"] + _state_names(n)
             + [f"u{j + 1}" for j in range(m)]
             + [f"yd{j + 1}" for j in range(n)]
             + [f"Dyd{j + 1}" for j in range(n)])
    node = ex.parse(source, set(names) | set(params))

    def evaluate(x, yp, up, yd, rd):
        b = dict(params)
        b["x"] = x
        for j in range(n):
            b[f"y{j + 1}"] = yp[j]
            b[f"yd{j + 1}"] = yd[j]
            b[f"Dyd{j + 1}"] = rd[j]
        for j in range(m):
            b[f"u{j + 1}"] = up[j]
        return ex.evaluate(node, b)

    return ControlLagrangian(eval=evaluate)


def _dynamics(sources, n, m, params) -> Dynamics:
    names = ["x"] + _state_names(n) + [f"u{j + 1}" for j in range(m)]
    nodes = [ex.parse(s, set(names) | set(params)) for s in sources]

    def evaluate(x, yp, up):
        b = dict(params)
        b["x"] = x
        for j in range(n):
            b[f"y{j + 1}"] = yp[j]
        for j in range(m):
            b[f"u{j + 1}"] = up[j]
        return np.array([ex.evaluate(node, b) for node in nodes])

    return Dynamics(eval=evaluate)
