"""Damped Newton iteration on stationarity systems.

The Jacobian is built by central finite differences of the (exact)
gradient.  Stationarity systems of grid functionals are banded: a
gradient entry couples only to unknowns within a bounded grid-index
distance.  Columns whose unknowns are far apart on the grid are therefore
probed simultaneously ("coloring"), which keeps the probe count
independent of the grid size.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NoConvergence, SingularSystem


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-10          # sup-norm target for the stationarity vector
    max_iter: int = 100
    fd_step: float = 1e-5       # relative step for Jacobian probes
    max_halvings: int = 30      # damping limit per Newton step


@dataclass(frozen=True)
class BandStructure:
    """Sparsity description of a stationarity system.

    grid_index[i] is the grid position of unknown i, channel[i] a small
    integer separating unknowns that share a grid position (state
    component, control component, multiplier component).  width bounds the
    grid-index distance over which gradient entries couple.
    """

    grid_index: np.ndarray
    channel: np.ndarray
    width: int


def fd_jacobian(grad_fn, z, g0, structure: BandStructure | None, step: float):
    """Central-difference Jacobian of grad_fn at z.

    With a band structure, unknowns of one channel whose grid indices are
    congruent modulo the coloring stride are perturbed together and each
    row is attributed to the unique in-band column.
    """
    nz = len(z)
    J = np.zeros((nz, nz))
    steps = step * np.maximum(1.0, np.abs(z))
    if structure is not None:
        stride = 2 * structure.width + 1
        n_classes = len(np.unique(structure.channel)) * stride
    if structure is None or 2 * n_classes >= 2 * nz:
        for j in range(nz):
            e = np.zeros(nz)
            e[j] = steps[j]
            J[:, j] = (grad_fn(z + e) - grad_fn(z - e)) / (2.0 * steps[j])
        return J

    gidx, chan, w = structure.grid_index, structure.channel, structure.width
    for c in np.unique(chan):
        in_chan = np.flatnonzero(chan == c)
        for phase in range(stride):
            members = in_chan[gidx[in_chan] % stride == phase]
            if len(members) == 0:
                continue
            e = np.zeros(nz)
            e[members] = steps[members]
            dg = (grad_fn(z + e) - grad_fn(z - e))
            # column of each member lives at a unique grid index; rows within
            # the band of exactly one member receive its entry
            col_of = {int(gidx[m]): m for m in members}
            for r in range(nz):
                lo = int(gidx[r]) - w
                cand = lo + (phase - lo) % stride
                m = col_of.get(cand)
                if m is not None and abs(cand - int(gidx[r])) <= w:
                    J[r, m] = dg[r] / (2.0 * steps[m])
    return J


def newton_solve(grad_fn, z0, opts: SolverOptions | None = None,
                 structure: BandStructure | None = None):
    """Drive grad_fn to zero; returns (z, iterations, gradient_norm).

    Steps are damped by halving while the residual norm fails to decrease.
    After the tolerance is met, a few refinement steps with the last
    Jacobian push the residual toward its floor, so downstream residual
    checks are not limited by the stopping tolerance.
    """
    opts = opts or SolverOptions()
    z = np.array(z0, dtype=float)
    g = grad_fn(z)
    gnorm = float(np.max(np.abs(g))) if len(g) else 0.0
    if gnorm <= opts.tol:
        return z, 0, gnorm

    for it in range(1, opts.max_iter + 1):
        J = fd_jacobian(grad_fn, z, g, structure, opts.fd_step)
        if not np.all(np.isfinite(J)):
            raise SingularSystem("stationarity Jacobian contains non-finite entries")
        dz = _solve_step(J, g)
        scale = 1.0
        z_new, g_new, gnorm_new = z, g, gnorm
        improved = False
        for _ in range(opts.max_halvings + 1):
            z_try = z + scale * dz
            g_try = grad_fn(z_try)
            gn_try = float(np.max(np.abs(g_try)))
            if np.isfinite(gn_try) and gn_try < gnorm:
                z_new, g_new, gnorm_new = z_try, g_try, gn_try
                improved = True
                break
            scale *= 0.5
        if not improved:
            # accept the smallest damped step and keep iterating; max_iter
            # bounds the total work
            z_new = z + scale * 2.0 * dz
            g_new = grad_fn(z_new)
            gnorm_new = float(np.max(np.abs(g_new)))
        z, g, gnorm = z_new, g_new, gnorm_new
        if gnorm <= opts.tol:
            for _ in range(3):
                dz = _solve_step(J, g)
                g_try = grad_fn(z + dz)
                gn_try = float(np.max(np.abs(g_try)))
                if np.isfinite(gn_try) and gn_try < gnorm:
                    z, g, gnorm = z + dz, g_try, gn_try
                else:
                    break
            return z, it, gnorm

    raise NoConvergence(
        f"no convergence after {opts.max_iter} iterations (|g| = {gnorm:.3e})",
        best=z, gradient_norm=gnorm, iterations=opts.max_iter)


def _solve_step(J, g):
    try:
        dz = np.linalg.solve(J, -g)
        if np.all(np.isfinite(dz)):
            return dz
    except np.linalg.LinAlgError:
        pass
    # singular or ill-conditioned: fall back to the minimum-norm step
    dz, *_ = np.linalg.lstsq(J, -g, rcond=1e-12)
    if not np.all(np.isfinite(dz)):
        raise SingularSystem("linearized system produced no finite step")
    if np.max(np.abs(dz)) == 0.0 and np.max(np.abs(g)) > 0.0:
        raise SingularSystem("linearized system admits no descent step")
    return dz
