"""Ready-made problems: the insurance reserve, an American put, linear mean-field drivers."""

from __future__ import annotations

import numpy as np

from .model import (
    DominationSpec,
    DriverSpec,
    ForwardModel,
    ObstacleSpec,
    ProblemSpec,
    TerminalSpec,
    TimeGrid,
)

__all__ = ["insurance_problem", "insurance_domination", "american_put_problem", "linear_mf_problem",
           "z_linear_problem"]


def _as_time_function(v):
    if callable(v):
        return v
    value = float(v)
    return lambda t: value + 0.0 * np.asarray(t, dtype=float)


def _sup_abs(fn, grid: TimeGrid):
    return float(np.max(np.abs(np.asarray(fn(grid.times), dtype=float) + np.zeros(grid.steps + 1))))


def _inf(fn, grid: TimeGrid):
    return float(np.min(np.asarray(fn(grid.times), dtype=float) + np.zeros(grid.steps + 1)))


def _lipschitz_probe(c, box=50.0, points=200_001):
    """Largest difference quotient of a scalar function on a dense grid."""
    y = np.linspace(-box, box, points)
    v = np.asarray(c(y), dtype=float)
    return float(np.max(np.abs(np.diff(v)) / np.diff(y)))


def insurance_problem(alpha=0.1, beta=0.05, theta=0.0, delta_rate=0.03, u=1.0, mu=0.5, c=None,
                      grid: TimeGrid | None = None, forward: ForwardModel | None = None, floor: float = 1.1,
                      terminal=None, c_lipschitz=None, p: float = 2.0) -> ProblemSpec:
    """Guaranteed endowment with a surrender option.

    Driver ``alpha_t - delta_t y + beta_t max(theta_t, y - E[Y])`` and
    surrender value ``u - c(y) + mu (E[Y] - u)^+`` as lower barrier.  The
    coefficient arguments may be constants or functions of time.  The
    terminal benefit defaults to ``max(floor, X_T)`` for a driftless
    geometric fund value ``X`` with volatility 0.2 started at 1.

    Lipschitz constants: ``lip_y = sup|delta| + sup beta``, ``lip_m = sup
    beta``, ``gamma1 = Lip(c)`` (measured on a dense grid unless given) and
    ``gamma2 = mu``.
    """
    if not 0.0 < mu < 1.0:
        raise ValueError(f"mu = {mu} must lie in (0, 1)")
    grid = grid or TimeGrid(1.0, 100)
    forward = forward or ForwardModel("geometric_bm", x0=1.0, drift=0.0, vol=0.2)
    a_fn, b_fn, th_fn, d_fn = (_as_time_function(v) for v in (alpha, beta, theta, delta_rate))
    if _inf(b_fn, grid) < 0 or _inf(th_fn, grid) < 0:
        raise ValueError("beta and theta must be nonnegative")
    c = c if c is not None else (lambda y: 0.01 * np.asarray(y, dtype=float))
    sup_beta, sup_delta = _sup_abs(b_fn, grid), _sup_abs(d_fn, grid)

    def f(t, x, y, z, law):
        return a_fn(t) - d_fn(t) * y + b_fn(t) * np.maximum(th_fn(t), y - law.mean)

    def h(t, x, y, law):
        return u - np.asarray(c(y), dtype=float) + mu * max(law.mean - u, 0.0)

    gamma1 = float(c_lipschitz) if c_lipschitz is not None else _lipschitz_probe(c)
    c_increasing = bool(np.all(np.diff(np.asarray(c(np.linspace(-50, 50, 20_001)), dtype=float)) >= 0))
    driver = DriverSpec(
        f,
        lip_y=sup_delta + sup_beta,
        lip_z=0.0,
        lip_m=sup_beta,
        monotone_in_m=sup_beta == 0.0,
        monotone_in_y=_inf(lambda t: -d_fn(t), grid) >= 0.0,
    )
    obstacle = ObstacleSpec(h, gamma1=gamma1, gamma2=mu, monotone_in_y=not (c_increasing and gamma1 > 0),
                            monotone_in_m=True, state_dependent=False)
    if terminal is None:
        terminal = lambda x: np.maximum(floor, x)  # noqa: E731
    return ProblemSpec(grid, forward, driver, obstacle, TerminalSpec(terminal), p_exponent=p, name="insurance")


def insurance_domination(problem: ProblemSpec, alpha=0.1, beta=0.05, theta=0.0, delta_rate=0.03) -> ProblemSpec:
    """Attach the z-free bound ``alpha + |delta| |y| + beta (|theta| + |y| + |m|)`` to an insurance driver."""
    from dataclasses import replace

    a_fn, b_fn, th_fn, d_fn = (_as_time_function(v) for v in (alpha, beta, theta, delta_rate))

    def phi(t, x, y, law):
        return a_fn(t) + np.abs(d_fn(t)) * np.abs(y) + b_fn(t) * (np.abs(th_fn(t)) + np.abs(y) + abs(law.mean))

    g = problem.grid
    sb, sd = _sup_abs(b_fn, g), _sup_abs(d_fn, g)
    dom = DominationSpec(phi, lip_y=sd + sb, lip_m=sb)
    return replace(problem, driver=replace(problem.driver, domination=dom))


def american_put_problem(strike=1.0, vol=0.2, rate=0.0, horizon=1.0, steps=50, x0=1.0) -> ProblemSpec:
    """Optimal stopping of ``(strike - X)^+`` under a geometric model; discounting enters as ``f = -rate y``."""
    grid = TimeGrid(horizon, steps)
    forward = ForwardModel("geometric_bm", x0=x0, drift=rate, vol=vol)
    driver = DriverSpec(lambda t, x, y, z, law: -rate * y, lip_y=abs(rate), monotone_in_y=rate <= 0)
    obstacle = ObstacleSpec(lambda t, x, y, law: np.maximum(strike - x, 0.0))
    terminal = TerminalSpec(lambda x: np.maximum(strike - x, 0.0))
    return ProblemSpec(grid, forward, driver, obstacle, terminal, name="american_put")


def linear_mf_problem(a=0.1, b=0.2, c=0.05, xi=1.0, grid: TimeGrid | None = None,
                      forward: ForwardModel | None = None, obstacle: ObstacleSpec | None = None,
                      terminal=None, p: float = 2.0) -> ProblemSpec:
    """Driver ``a y + b E[Y] + c``; without obstacle and with constant ``xi`` the mean solves a linear ODE."""
    grid = grid or TimeGrid(1.0, 200)
    forward = forward or ForwardModel("brownian")
    driver = DriverSpec(lambda t, x, y, z, law: a * y + b * law.mean + c, lip_y=abs(a), lip_m=abs(b),
                        monotone_in_m=b >= 0, monotone_in_y=a >= 0)
    if terminal is None:
        terminal = lambda x: np.full(np.shape(x), float(xi))  # noqa: E731
    return ProblemSpec(grid, forward, driver, obstacle or ObstacleSpec.none(), TerminalSpec(terminal),
                       p_exponent=p, name="linear_mf")


def z_linear_problem(k=0.1, grid: TimeGrid | None = None) -> ProblemSpec:
    """Driver ``k z`` with ``xi = B_T``: the solution is ``Y_t = B_t + k (T - t)``."""
    grid = grid or TimeGrid(1.0, 50)
    driver = DriverSpec(lambda t, x, y, z, law: k * z, lip_z=abs(k), monotone_in_y=True)
    return ProblemSpec(grid, ForwardModel("brownian"), driver, ObstacleSpec.none(),
                       TerminalSpec(lambda x: np.asarray(x, dtype=float)), name="z_linear")
