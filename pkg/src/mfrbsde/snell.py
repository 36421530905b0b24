"""Reflected backward induction with a frozen law, and the Picard loop on laws.

For a fixed curve of marginal laws the reflected equation is an optimal
stopping problem: each backward step takes the continuation value and lifts
it onto the half line ``{y >= h(y, m)}``.  The law curve is then iterated to a
fixed point, window by window from the horizon, each window short enough for
the law-to-law map to contract.
"""

from __future__ import annotations

import logging
import math

import numpy as np

from ._sweep import as_discretization, check_grid, implicit_solve, sweep
from .analysis import _problem_feasibility
from .errors import ConvergenceError, InfeasibleError, MFRBSDEError
from .lawtools import LawCurve, curve_distance
from .model import LawView, ObstacleSpec, ProblemSpec, SolutionBundle

__all__ = [
    "reflect_threshold",
    "backward_pass",
    "picard_solve",
    "skorohod_residual",
    "constraint_violation",
]

log = logging.getLogger(__name__)

MAX_DOUBLINGS = 1000
ROOT_TOL = 1e-12


def _g(obstacle, t, x, y, law):
    return y - np.asarray(obstacle(t, x, y, law), dtype=float)


def reflect_threshold(obstacle: ObstacleSpec, law: LawView, t: float = 0.0, x=0.0, tol: float = ROOT_TOL):
    """Smallest admissible value: the root ``y*`` of ``y = h(t, x, y, law)``.

    Because ``y - h(y)`` is strictly increasing, ``{y >= h(y, law)}`` is
    exactly ``[y*, inf)``.  Vectorised over ``x``.  The root is bracketed by
    doubling, bisected to ``tol`` and polished with one secant-Newton step.
    """
    if obstacle.absent:
        return np.full(np.shape(x), -np.inf) if np.ndim(x) else -np.inf
    scalar = np.ndim(x) == 0
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if obstacle.gamma1 == 0.0:
        y = np.asarray(obstacle(t, x, np.zeros_like(x), law), dtype=float)
        y = np.broadcast_to(y, x.shape).copy()
        return float(y[0]) if scalar else y
    y0 = np.broadcast_to(np.asarray(obstacle(t, x, np.zeros_like(x), law), dtype=float), x.shape)
    width = 1.0 + np.abs(y0)
    lo, hi = y0 - width, y0 + width
    for _ in range(MAX_DOUBLINGS):
        bad_lo = _g(obstacle, t, x, lo, law) > 0
        bad_hi = _g(obstacle, t, x, hi, law) < 0
        if not (bad_lo.any() or bad_hi.any()):
            break
        width = np.where(bad_lo | bad_hi, 2.0 * width, width)
        lo = np.where(bad_lo, y0 - width, lo)
        hi = np.where(bad_hi, y0 + width, hi)
    else:
        raise MFRBSDEError("reflection threshold: bracket expansion exceeded 1000 doublings")
    while True:
        span = hi - lo
        if np.all(span <= np.maximum(tol, 4 * np.finfo(float).eps * np.abs(hi))):
            break
        mid = 0.5 * (lo + hi)
        pos = _g(obstacle, t, x, mid, law) >= 0
        hi = np.where(pos, mid, hi)
        lo = np.where(pos, lo, mid)
    y = 0.5 * (lo + hi)
    # Newton polish with a secant slope across the final bracket
    g_lo, g_hi, g_y = (_g(obstacle, t, x, v, law) for v in (lo, hi, y))
    slope = np.where(hi > lo, (g_hi - g_lo) / np.where(hi > lo, hi - lo, 1.0), 1.0)
    cand = y - g_y / np.where(slope > 0, slope, 1.0)
    better = (np.abs(_g(obstacle, t, x, cand, law)) < np.abs(g_y)) & (cand >= lo) & (cand <= hi)
    y = np.where(better, cand, y)
    return float(y[0]) if scalar else y


def _snell_step(problem, root_tol=ROOT_TOL):
    drv, obs = problem.driver, problem.obstacle
    cache = [None, None, None]  # step index, law object, threshold

    def threshold(i, t, x, law):
        if cache[0] != i or cache[1] is not law:
            value = reflect_threshold(obs, law, t, x if obs.state_dependent else 0.0, root_tol)
            cache[:] = [i, law, value]
        return cache[2]

    def step(i, t, x, c, z, law, a):
        yhat = implicit_solve(drv, t, x, z, law, c, a)
        if obs.absent:
            return yhat, np.zeros_like(yhat)
        y = np.maximum(yhat, threshold(i, t, x, law))
        return y, y - yhat

    def feature(i, t, x, law):
        return threshold(i, t, x, law) if obs.state_dependent and not obs.absent else None

    step.stops = True
    step.feature = feature
    return step


def _assemble(problem, disc, ys, zs, dks, laws, diagnostics):
    N = problem.grid.steps
    return SolutionBundle(
        grid=problem.grid,
        y=[ys[i] for i in range(N + 1)],
        z=[zs[i] for i in range(N)],
        dk=[dks[i] for i in range(N)],
        weights=[disc.weights(i) for i in range(N + 1)],
        states=[disc.states(i) for i in range(N + 1)],
        law_curve=LawCurve(laws[i] for i in range(N + 1)),
        diagnostics=diagnostics,
        kind=disc.kind,
    )


def _law(disc, i, values):
    return LawView.from_values(values, disc.weights(i) if disc.kind == "lattice" else None)


def terminal_values(problem, disc):
    N = problem.grid.steps
    yN = np.broadcast_to(problem.terminal(disc.states(N)), disc.states(N).shape).astype(float)
    return yN


def backward_pass(problem: ProblemSpec, law_curve, engine, paths=None, implicit_weight=0.5) -> SolutionBundle:
    """One application of the law-to-solution map: reflected induction with ``law_curve`` frozen."""
    disc = as_discretization(engine, problem, paths)
    check_grid(problem)
    N = problem.grid.steps
    if len(law_curve) != N + 1:
        raise ValueError(f"grid mismatch: law curve has {len(law_curve)} points, grid has {N + 1}")
    ys, zs, dks, rmse = sweep(problem, disc, law_curve, 0, N, terminal_values(problem, disc), None,
                              _snell_step(problem), implicit_weight)
    bundle = _assemble(problem, disc, ys, zs, dks, list(law_curve), {"regression_rmse": rmse})
    _finish_diagnostics(bundle, problem)
    return bundle


def skorohod_residual(bundle: SolutionBundle, problem: ProblemSpec) -> float:
    """``E sum_i |Y_i - h(Y_i, m_i)| dK_i``; zero when pushes happen only on the barrier."""
    obs = problem.obstacle
    if obs.absent:
        return 0.0
    t = bundle.grid.times
    total = 0.0
    for i, dk in enumerate(bundle.dk):
        if not np.any(dk):
            continue
        y = bundle.y[i]
        gap = y - np.asarray(obs(t[i], bundle.states[i], y, bundle.law_curve[i]), dtype=float)
        total += float(np.dot(bundle.weights[i], np.abs(gap) * dk))
    return total


def constraint_violation(bundle: SolutionBundle, problem: ProblemSpec) -> float:
    """``max_{i, path} (h(Y_i, m_i) - Y_i)^+``."""
    obs = problem.obstacle
    if obs.absent:
        return 0.0
    t = bundle.grid.times
    worst = 0.0
    for i, y in enumerate(bundle.y):
        gap = np.asarray(obs(t[i], bundle.states[i], y, bundle.law_curve[i]), dtype=float) - y
        worst = max(worst, float(np.max(gap, initial=0.0)))
    return worst


def _finish_diagnostics(bundle, problem):
    d = bundle.diagnostics
    d["skorohod_residual"] = skorohod_residual(bundle, problem)
    d["constraint_violation"] = constraint_violation(bundle, problem)
    means = bundle.mean_curve()
    d["max_mean_jump"] = float(np.max(np.abs(np.diff(means)))) if means.size > 1 else 0.0
    d.setdefault("penalty_level", None)


def window_bounds(steps: int, per_window: int):
    """Grid-index windows ``(lo, hi)`` from the horizon backward."""
    out, hi = [], steps
    while hi > 0:
        lo = max(0, hi - per_window)
        out.append((lo, hi))
        hi = lo
    return out


def picard_solve(problem: ProblemSpec, engine, paths=None, tol: float = 1e-4, max_outer: int = 100,
                 windowing: bool = True, safety: float = 0.9, force: bool = False, metric: str = "mean_only",
                 damping=None, implicit_weight: float = 0.5, step=None, root_tol: float = ROOT_TOL) -> SolutionBundle:
    """Fixed point of the law-to-solution map, pasted over contraction windows.

    Inside a window the law curve starts at the window's terminal law held
    constant and is replaced by the law of each new solution until
    successive curves differ by less than ``tol`` (``metric`` chooses the
    mean gap or the 2-Wasserstein distance).  ``picard_iters`` counts the
    passes after the first one.  Infeasible constants raise
    :class:`InfeasibleError` unless ``force`` is set, in which case the
    whole horizon is iterated at once with damping 0.5 by default.
    """
    disc = as_discretization(engine, problem, paths)
    check_grid(problem)
    grid = problem.grid
    N, dt = grid.steps, grid.dt
    feas = _problem_feasibility(problem, safety)
    if not feas.feasible and not force:
        raise InfeasibleError(
            f"no contraction window exists: contraction value {feas.gamma_condition_value:.6g} >= 1 "
            f"for p = {problem.p_exponent:g} (pass force=True to iterate anyway)"
        )
    if windowing and feas.feasible and math.isfinite(feas.delta_used):
        per = max(1, int(math.floor(feas.delta_used / dt + 1e-9)))
    else:
        per = N
    per = min(per, N)
    damp = damping if damping is not None else (0.5 if not feas.feasible else 1.0)
    step = step or _snell_step(problem, root_tol)

    laws = [None] * (N + 1)
    yN = terminal_values(problem, disc)
    laws[N] = _law(disc, N, yN)
    Y, Z, DK, REAL = {N: yN}, {}, {}, {N: yN}
    PW = {N: yN}
    per_window, last_dist, rmse = [], 0.0, 0.0
    windows = window_bounds(N, per)
    for lo, hi in windows:
        for i in range(lo, hi):
            laws[i] = _const_law(disc, i, laws[hi])
        idx = list(range(lo, hi))
        holder, pw = [None], {}
        ys, zs, dks, r = sweep(problem, disc, laws, lo, hi, Y[hi], Z.get(hi), step, implicit_weight,
                               REAL[hi], holder, pw)
        prev_y = ys
        iters = 0
        while True:
            new_laws = {i: _law(disc, i, ys[i]) for i in idx}
            dist = curve_distance([laws[i] for i in idx], [new_laws[i] for i in idx], mode=metric)
            if iters > 0 and dist < tol:
                break
            if iters >= max_outer:
                raise ConvergenceError(
                    f"Picard iteration did not reach tol={tol:g} in {max_outer} passes on window "
                    f"[{grid.times[lo]:.4g}, {grid.times[hi]:.4g}]; last distance {dist:.3e}",
                    last_distance=dist,
                )
            if damp != 1.0 and iters > 0:
                mixed = {i: damp * ys[i] + (1.0 - damp) * prev_y[i] for i in idx}
                prev_y = ys
                for i in idx:
                    laws[i] = _law(disc, i, mixed[i])
            else:
                prev_y = ys
                for i in idx:
                    laws[i] = new_laws[i]
            ys, zs, dks, r = sweep(problem, disc, laws, lo, hi, Y[hi], Z.get(hi), step, implicit_weight,
                                   REAL[hi], holder, pw)
            iters += 1
            last_dist = dist
        rmse = max(rmse, r)
        last_dist = dist
        per_window.append(iters)
        log.debug("window [%d, %d]: %d Picard passes, distance %.3e", lo, hi, iters, dist)
        for i in idx:
            Y[i], Z[i], DK[i] = ys[i], zs[i], dks[i]
        PW.update(pw)
        REAL[lo] = holder[0]
    diagnostics = {
        "picard_iters": int(sum(per_window)),
        "picard_iters_per_window": per_window,
        "windows": [[float(grid.times[lo]), float(grid.times[hi])] for lo, hi in windows],
        "final_distance": float(last_dist),
        "metric": metric,
        "tol": tol,
        "delta_used": float(min(per * dt, grid.horizon)),
        "delta_max": float(feas.delta_max),
        "gamma_condition": float(feas.gamma_condition_value),
        "feasible": bool(feas.feasible),
        "lambda_at_delta": float(feas.lam(per * dt)) if feas.feasible else float("nan"),
        "damping": damp,
        "regression_rmse": rmse,
    }
    bundle = _assemble(problem, disc, Y, Z, DK, laws, diagnostics)
    if len(PW) == N + 1:
        bundle.pathwise = [PW[i] for i in range(N + 1)]
    _finish_diagnostics(bundle, problem)
    return bundle


def _const_law(disc, i, law: LawView) -> LawView:
    """Initial guess at index ``i``: the given law, resized to the step's support if needed."""
    if disc.kind == "lattice":
        n = disc.states(i).size
        return LawView(law.mean, np.full(n, law.mean), disc.weights(i))
    return law
