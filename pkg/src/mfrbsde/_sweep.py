"""Backward sweep shared by the reflected and penalized solvers.

One step from ``t_{i+1}`` to ``t_i`` reads

    yhat = E[Y_{i+1} + (1 - w) dt f_{i+1} | F_i] + w dt f(t_i, x_i, yhat, z_i, law_i)

with ``w = 1/2`` (trapezoidal weighting).  The integrand ``z`` at the horizon
is taken from a ghost tree level beyond ``T`` on a lattice and from
``z_{N-1}`` on Monte Carlo paths.  The scalar
implicit equation is solved by fixed-point iteration, a contraction because
``w dt C_f < 1``.  What happens after ``yhat`` (reflection, penalisation) is
delegated to a ``step`` callback.
"""

from __future__ import annotations

import math

import numpy as np

from .condexp import Discretization, discretize
from .errors import ConvergenceError, GridError
from .model import ProblemSpec

MAX_INNER = 100


def as_discretization(engine, problem: ProblemSpec, paths=None) -> Discretization:
    if isinstance(engine, Discretization):
        return engine
    return discretize(engine, problem.grid, problem.forward, paths)


def check_grid(problem: ProblemSpec):
    if problem.driver.c_f * problem.grid.dt >= 1.0:
        raise GridError(
            f"C_f * dt = {problem.driver.c_f * problem.grid.dt:.3g} >= 1: refine grid "
            "(the implicit step is not a contraction)"
        )


def eval_driver(driver, t, x, y, z, law):
    out = np.asarray(driver(t, x, y, z, law), dtype=float)
    return np.broadcast_to(out, np.shape(y))


def implicit_solve(driver, t, x, z, law, c, a):
    """Solve ``y = c + a f(t, x, y, z, law)`` componentwise."""
    c = np.asarray(c, dtype=float)
    if a == 0.0:
        return c.copy()
    y = c + a * eval_driver(driver, t, x, c, z, law)
    for _ in range(MAX_INNER):
        y_new = c + a * eval_driver(driver, t, x, y, z, law)
        gap = np.max(np.abs(y_new - y)) if y.size else 0.0
        y = y_new
        if gap <= 1e-14 * (1.0 + float(np.max(np.abs(y)))):
            return y
    raise ConvergenceError(f"implicit driver step did not converge in {MAX_INNER} iterations",
                           last_distance=float(gap))


def terminal_z(problem, disc, z_before):
    """Martingale integrand at the horizon, needed by the explicit half of the last step."""
    if disc.kind != "lattice":
        return z_before
    grid, fwd = problem.grid, problem.forward
    N, sq = grid.steps, math.sqrt(grid.dt)
    ghost = fwd.state(grid.horizon + grid.dt, (2.0 * np.arange(N + 2) - (N + 1)) * sq)
    xi = np.broadcast_to(problem.terminal(ghost), ghost.shape)
    return (xi[1:] - xi[:-1]) / (2.0 * sq)


def _refit_near_barrier(disc, i, target, c, extra):
    """Refit the continuation value where the barrier rises above its floor.

    Only there can stopping be optimal, so the fit is concentrated on those
    paths (the in-the-money regression of Longstaff and Schwartz) with the
    barrier itself as an extra regressor.  Elsewhere the global fit stays.
    """
    floor = float(np.min(extra))
    mask = extra > floor + 1e-12 * max(1.0, abs(floor))
    k = disc.engine.degree + 2
    if mask.sum() < 10 * k:
        return c, mask
    sub = disc.engine.basis(disc.states(i)[mask], extra[mask])
    out = c.copy()
    out[mask] = sub.project(target[mask])
    return out, mask


def sweep(problem, disc, laws, lo, hi, y_hi, z_hi, step, weight=0.5, real_hi=None, ys_real=None, pathwise=None):
    """Run the backward recursion from grid index ``hi`` down to ``lo``.

    ``laws`` is indexable by absolute grid index.  ``z_hi`` is the martingale
    integrand already computed at ``hi`` (``None`` when ``hi == N``).
    Returns dicts ``y, z, dk`` keyed by grid index, and the largest
    regression error estimate met along the way (zero on a lattice).  With
    realised regression targets, ``real_hi`` carries the pathwise values at
    ``hi`` and the pathwise values at ``lo`` are stored in ``ys_real[0]``;
    a ``pathwise`` dict receives them at every index of the window.
    """
    grid = problem.grid
    N, dt, times = grid.steps, grid.dt, grid.times
    drv = problem.driver
    ys, zs, dks = {hi: np.asarray(y_hi, dtype=float)}, {}, {}
    if z_hi is not None:
        zs[hi] = z_hi
    realized = disc.realized
    real = np.asarray(y_hi if real_hi is None else real_hi, dtype=float)
    ys_real = ys_real if ys_real is not None else [None]
    rmse = 0.0
    for i in range(hi - 1, lo - 1, -1):
        y1 = ys[i + 1]
        x = disc.states(i)
        extra = None
        if disc.kind == "mc" and getattr(step, "feature", None) is not None and disc.engine.barrier_feature:
            extra = step.feature(i, times[i], x, laws[i])
        z = disc.z(i, real if realized else y1)
        if i + 1 not in zs:
            zs[i + 1] = terminal_z(problem, disc, z)
        w = weight
        base = real if realized else y1
        if w < 1.0:
            target = base + (1.0 - w) * dt * eval_driver(drv, times[i + 1], disc.states(i + 1), y1, zs[i + 1],
                                                         laws[i + 1])
        else:
            target = base
        c = disc.condexp(i, target)
        stop_mask = True
        if extra is not None:
            c, stop_mask = _refit_near_barrier(disc, i, target, c, extra)
        if disc.kind == "mc":
            k = disc.engine.degree + 1
            rmse = max(rmse, math.sqrt(float(np.mean((target - c) ** 2)) * k / target.size))
        y, dk = step(i, times[i], x, c, z, laws[i], w * dt)
        if realized:
            # pathwise value: the realised continuation, or the barrier where the path is stopped;
            # paths sitting on the barrier's floor are never treated as stopped
            # minus z dB, a conditionally centred control variate (with the
            # leave-one-out z, so the path's own increment does not leak in)
            mart = disc.z_loo(i, real if realized else y1, z) * disc.paths.dB[:, i]
            if getattr(step, "stops", False):
                real = np.where((dk > 0) & stop_mask, y, target + (y - dk - c) - mart)
            else:
                real = target + (y - c) - mart
        ys[i], zs[i], dks[i] = y, z, dk
        if pathwise is not None and realized:
            pathwise[i] = real
    ys_real[0] = real if realized else ys[lo]
    return ys, zs, dks, rmse
