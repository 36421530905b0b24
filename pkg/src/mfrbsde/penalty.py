"""Penalisation scheme.

Start from the unreflected mean-field solution ``Y^0``.  For each penalty
level ``n`` solve an ordinary (law-frozen) backward equation in which the
obstacle is replaced by the restoring drift ``n (Y^n - L^n)^-``, where the
barrier level ``L^n = h(Y^{n-1}, E[Y^{n-1}])`` and the law seen by the driver
both come from the previous iterate.  Under the monotonicity hypotheses the
iterates increase to the minimal reflected solution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ._sweep import as_discretization, check_grid, eval_driver, implicit_solve, sweep
from .analysis import _problem_feasibility, kappa_transform, theta_transform, untransform
from .errors import ConvergenceError, DominationError
from .lawtools import LawCurve
from .model import DriverSpec, LawView, ObstacleSpec, ProblemSpec, SolutionBundle
from .snell import _finish_diagnostics, _law, picard_solve, skorohod_residual, terminal_values

__all__ = ["base_solve", "penalized_pass", "penalty_solve", "domination_check", "DominationReport",
           "DEFAULT_SCHEDULE", "prepare_problem"]

DEFAULT_SCHEDULE = tuple(2**k for k in range(11))


def base_solve(problem: ProblemSpec, engine, paths=None, tol: float = 1e-4, **picard_kw) -> SolutionBundle:
    """Unreflected mean-field solution: the Picard solver with the obstacle removed."""
    free = replace(problem, obstacle=ObstacleSpec.none())
    bundle = picard_solve(free, engine, paths, tol=tol, **picard_kw)
    bundle.diagnostics["penalty_level"] = 0
    return bundle


def _penalized_step(problem, levels, n):
    drv = problem.driver

    def step(i, t, x, c, z, law, a):
        y = implicit_solve(drv, t, x, z, law, c, a)
        if n == 0:
            return y, np.zeros_like(y)
        L = levels[i]
        b = n * problem.grid.dt
        low = y < L
        if np.any(low):
            # on {y < L} the equation is y = (c + a f(y) + b L) / (1 + b)
            cc = (c[low] + b * L[low]) / (1.0 + b)
            zz = z[low] if np.ndim(z) else z
            xl = x[low] if np.ndim(x) else x
            y_low = implicit_solve(drv, t, xl, zz, law, cc, a / (1.0 + b))
            scale = 1.0 + np.abs(L[low])
            if np.any(y_low > L[low] + 1e-9 * scale):
                raise ConvergenceError("penalised step: branch inconsistency (y above barrier on the penalised branch)")
            y = y.copy()
            y[low] = np.minimum(y_low, L[low])
        return y, b * np.maximum(L - y, 0.0)

    return step


def penalized_pass(problem: ProblemSpec, prev: SolutionBundle, n: float, engine, paths=None,
                   implicit_weight: float = 0.5) -> SolutionBundle:
    """One penalised backward equation at level ``n`` with data frozen from ``prev``."""
    disc = as_discretization(engine, problem, paths)
    check_grid(problem)
    if prev.grid != problem.grid:
        raise ValueError("grid mismatch between problem and previous iterate")
    if n < 0:
        raise ValueError("penalty level must be nonnegative")
    N, times = problem.grid.steps, problem.grid.times
    obs = problem.obstacle
    laws = list(prev.law_curve)
    if obs.absent:
        levels = [np.full_like(prev.y[i], -np.inf) for i in range(N)]
    else:
        levels = [np.broadcast_to(np.asarray(obs(times[i], prev.states[i], prev.y[i], laws[i]), dtype=float),
                                  prev.y[i].shape) for i in range(N)]
    pw = {}
    ys, zs, dks, rmse = sweep(problem, disc, laws, 0, N, terminal_values(problem, disc), None,
                              _penalized_step(problem, levels, n), implicit_weight, pathwise=pw)
    own = LawCurve(_law(disc, i, ys[i]) for i in range(N + 1))
    bundle = SolutionBundle(
        grid=problem.grid,
        y=[ys[i] for i in range(N + 1)],
        z=[zs[i] for i in range(N)],
        dk=[dks[i] for i in range(N)],
        weights=[disc.weights(i) for i in range(N + 1)],
        states=[disc.states(i) for i in range(N + 1)],
        law_curve=own,
        diagnostics={"regression_rmse": rmse},
        kind=disc.kind,
        pathwise=[pw[i] for i in range(N)] + [ys[N]] if pw else [],
    )
    dt = problem.grid.dt
    bundle.diagnostics["constraint_defect"] = float(
        sum(np.dot(bundle.weights[i], np.maximum(levels[i] - ys[i], 0.0)) for i in range(N)) * dt
    ) if not obs.absent else 0.0
    _finish_diagnostics(bundle, problem)
    bundle.diagnostics["penalty_level"] = n
    return bundle


def prepare_problem(problem: ProblemSpec, auto_theta: bool = True, auto_kappa: bool = True, kappa: float = 2.0,
                    theta=None):
    """The problem the penalised iterates are actually computed on.

    Returns ``(work, theta, kappa)`` where ``theta`` is 0 and ``kappa`` is
    None when the corresponding rewrite was not applied.
    """
    work = problem
    used_theta = 0.0
    if theta is not None:
        used_theta = float(theta)
    elif auto_theta and not problem.driver.monotone_in_y:
        used_theta = -(problem.driver.c_f + 1.0)
    if used_theta:
        work = theta_transform(work, used_theta)
    used_kappa = None
    if auto_kappa and not work.obstacle.monotone_in_y and not work.obstacle.absent:
        new_obs, _ = kappa_transform(work.obstacle, kappa, work.p_exponent)
        work = replace(work, obstacle=new_obs)
        used_kappa = kappa
    return work, used_theta, used_kappa


def _max_gap(a: SolutionBundle, b: SolutionBundle):
    """``max (a - b)^+`` and ``max |a - b|`` over all nodes."""
    pos = absd = 0.0
    for u, v in zip(a.y, b.y):
        d = u - v
        pos = max(pos, float(np.max(d, initial=0.0)))
        absd = max(absd, float(np.max(np.abs(d), initial=0.0)))
    return pos, absd


def penalty_solve(problem: ProblemSpec, engine, paths=None, schedule=DEFAULT_SCHEDULE, tol: float = 1e-8,
                  picard_tol: float = 1e-4, auto_theta: bool = True, auto_kappa: bool = True, kappa: float = 2.0,
                  theta=None, keep_history: bool = False, implicit_weight: float = 0.5,
                  **picard_kw) -> SolutionBundle:
    """Base solution followed by penalised passes along ``schedule``.

    When the driver is not declared nondecreasing in ``y`` the problem is
    first rewritten for ``exp(theta t) Y`` with ``theta = -(C_f + 1)`` (or the
    ``theta`` given), and when the obstacle is not nondecreasing in ``y`` it
    is replaced by its ``kappa``-average with the identity; both are undone
    before returning.  The run stops once successive iterates differ by less
    than ``tol`` everywhere.  Per-level diagnostics go to
    ``diagnostics["levels"]``; ``converged`` is False when the schedule ran
    out first.
    """
    schedule = list(schedule)
    if any(b <= a for a, b in zip(schedule, schedule[1:])) or not schedule or schedule[0] <= 0:
        raise ValueError("schedule must be a nonempty increasing sequence of positive levels")
    work, used_theta, used_kappa = prepare_problem(problem, auto_theta, auto_kappa, kappa, theta)
    feas = _problem_feasibility(problem)
    disc = as_discretization(engine, work, paths)
    base = base_solve(work, disc, tol=picard_tol, implicit_weight=implicit_weight, **picard_kw)
    history = [base]
    levels = []
    prev = base
    converged = False
    for n in schedule:
        cur = penalized_pass(work, prev, n, disc, implicit_weight=implicit_weight)
        defect, change = _max_gap(prev, cur)
        levels.append({
            "n": n,
            "monotonicity_defect": defect,
            "constraint_defect": cur.diagnostics["constraint_defect"],
            "skorohod_residual": cur.diagnostics["skorohod_residual"],
            "sup_change": change,
            "regression_rmse": cur.diagnostics["regression_rmse"],
        })
        if keep_history:
            history.append(cur)
        prev = cur
        if change < tol:
            converged = True
            break
    final = replace(prev, diagnostics=dict(prev.diagnostics))
    final.diagnostics.update({
        "levels": levels,
        "converged": converged,
        "theta": used_theta,
        "kappa": used_kappa,
        "base_picard_iters": base.diagnostics["picard_iters"],
        "picard_iters": base.diagnostics["picard_iters"],
        "picard_iters_per_window": base.diagnostics["picard_iters_per_window"],
        # the base solve carries no obstacle; the constants reported are those of the reflected problem
        "gamma_condition": float(feas.gamma_condition_value),
        "feasible": bool(feas.feasible),
        "delta_used": base.diagnostics["delta_used"],
        "schedule": [lv["n"] for lv in levels],
    })
    if keep_history:
        final.iterates = history
    if used_theta:
        final = untransform(final, used_theta)
    # residual and violation are reported against the original obstacle
    _finish_diagnostics(final, problem)
    return final


# -- domination -------------------------------------------------------------------------------


@dataclass
class DominationReport:
    passed: bool
    worst_excess: float
    witness: dict = field(default_factory=dict)
    upper_bound_gap: float = 0.0
    levels_checked: int = 0

    def as_dict(self):
        return {"passed": self.passed, "worst_excess": self.worst_excess, "witness": self.witness,
                "upper_bound_gap": self.upper_bound_gap, "levels_checked": self.levels_checked}


def domination_check(problem: ProblemSpec, samples: int = 10_000, box: float = 5.0, seed: int = 0,
                     engine=None, schedule=DEFAULT_SCHEDULE, tol: float = 1e-10) -> DominationReport:
    """Check ``f <= Phi`` by probing, then the upper bound ``Y^n <= Ybar`` on a lattice.

    ``Ybar`` solves the reflected problem with the z-free driver ``Phi``.
    Raises :class:`DominationError` with a witness on any violation, or when
    a z-dependent driver declares no domination function.
    """
    drv = problem.driver
    if drv.domination is None:
        if drv.lip_z > 0:
            raise DominationError("domination required for a z-dependent driver: declare DriverSpec.domination")
        raise DominationError("no domination function declared")
    dom = drv.domination
    rng = np.random.default_rng(seed)
    T = problem.grid.horizon
    t = rng.uniform(0.0, T, samples)
    x = problem.forward.x0 + rng.uniform(-box, box, samples)
    if problem.forward.kind == "geometric_bm":
        x = np.abs(x) + 1e-3
    y = rng.uniform(-box, box, samples)
    z = rng.uniform(-box, box, samples)
    m = rng.uniform(-box, box, samples)
    worst, witness = -np.inf, {}
    for k in range(samples):
        law = LawView.point(m[k])
        fv = float(np.asarray(drv(t[k], x[k], np.array([y[k]]), np.array([z[k]]), law)).reshape(-1)[0])
        pv = float(np.asarray(dom(t[k], x[k], np.array([y[k]]), law)).reshape(-1)[0])
        if fv - pv > worst:
            worst = fv - pv
            witness = {"t": float(t[k]), "x": float(x[k]), "y": float(y[k]), "z": float(z[k]), "m": float(m[k]),
                       "f": fv, "domination": pv}
    if worst > tol:
        raise DominationError(f"f exceeds its domination function by {worst:.3e}", witness=witness)

    from .condexp import LatticeEngine

    engine = engine or LatticeEngine(problem.forward, problem.grid)
    upper_driver = DriverSpec(lambda t, x, y, z, law: dom(t, x, y, law), lip_y=dom.lip_y, lip_z=0.0,
                              lip_m=dom.lip_m, monotone_in_m=drv.monotone_in_m)
    upper = picard_solve(replace(problem, driver=upper_driver), engine, tol=1e-12)
    sol = penalty_solve(problem, engine, schedule=schedule, tol=0.0, auto_theta=False, keep_history=True,
                        picard_tol=1e-12)
    gap = 0.0
    for it in sol.iterates:
        for i, (a, b) in enumerate(zip(it.y, upper.y)):
            g = float(np.max(a - b))
            if g > gap:
                gap = g
                witness = {"level": it.diagnostics.get("penalty_level"), "index": i, "excess": g}
    if gap > tol:
        raise DominationError(f"penalised iterate exceeds the dominated solution by {gap:.3e}", witness=witness)
    return DominationReport(True, float(max(worst, 0.0)), witness, gap, len(sol.iterates))
