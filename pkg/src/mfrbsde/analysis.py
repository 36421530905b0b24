"""Contraction constants, admissible time windows and problem transforms."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import BoundViolation, InfeasibleError
from .model import DominationSpec, DriverSpec, LawView, ObstacleSpec, ProblemSpec, SolutionBundle, TerminalSpec

__all__ = [
    "FeasibilityReport",
    "gamma_condition",
    "contraction_lambda",
    "p1_lambda",
    "admissible_delta",
    "feasibility_report",
    "theta_transform",
    "transform_bundle",
    "untransform",
    "kappa_transform",
    "LinearizationReport",
    "linearization_diagnostic",
]


def _doob(p):
    return (p / (p - 1.0)) ** p


def gamma_condition(p: float, gamma1: float, gamma2: float):
    """Return ``(value, feasible)`` for the obstacle smallness condition.

    ``value = (g1 + g2)^((p-1)/p) * ((p/(p-1))^p g1 + g2)^(1/p)`` and the
    condition holds when ``value < 1``.
    """
    if not p > 1:
        raise ValueError("gamma_condition needs p > 1; use p1_lambda for p = 1")
    value = (gamma1 + gamma2) ** ((p - 1.0) / p) * (_doob(p) * gamma1 + gamma2) ** (1.0 / p)
    return value, bool(value < 1.0)


def contraction_lambda(delta: float, p: float, c_f: float, gamma1: float, gamma2: float) -> float:
    """Lipschitz constant of the Snell map on a window of length ``delta``."""
    if not p > 1:
        raise ValueError("contraction_lambda needs p > 1")
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    a = delta * c_f
    return (2 * a + gamma1 + gamma2) ** ((p - 1.0) / p) * (_doob(p) * (a + gamma1) + (a + gamma2)) ** (1.0 / p)


def p1_lambda(delta: float, c_f: float, gamma1: float, gamma2: float) -> float:
    """Window contraction constant in the ``p = 1`` setting."""
    return 2 * delta * c_f + gamma1 + gamma2


def admissible_delta(p: float, c_f: float, gamma1: float, gamma2: float, safety: float = 0.9) -> float:
    """Length of a time window on which the Snell map contracts.

    For ``p = 1`` this is ``safety * (1 - g1 - g2) / (2 C_f)``.  For ``p > 1``
    it is ``safety`` times the root of ``Lambda(delta) = 1``, located by
    doubling a bracket and bisecting to relative tolerance ``1e-12``.
    Returns ``inf`` when ``C_f = 0``.
    """
    if not 0 < safety <= 1:
        raise ValueError("safety must lie in (0, 1]")
    if p == 1:
        if not gamma1 + gamma2 < 1:
            raise InfeasibleError(f"no contraction window exists: gamma1 + gamma2 = {gamma1 + gamma2:g} >= 1")
        if c_f == 0:
            return math.inf
        return safety * (1.0 - gamma1 - gamma2) / (2.0 * c_f)
    value, feasible = gamma_condition(p, gamma1, gamma2)
    if not feasible:
        raise InfeasibleError(f"no contraction window exists: gamma condition value {value:.6g} >= 1")
    if c_f == 0:
        return math.inf

    def lam(d):
        return contraction_lambda(d, p, c_f, gamma1, gamma2)

    hi = 1.0
    while lam(hi) <= 1.0:
        hi *= 2.0
    lo = 0.0
    while hi - lo > 1e-12 * hi:
        mid = 0.5 * (lo + hi)
        if lam(mid) < 1.0:
            lo = mid
        else:
            hi = mid
    return safety * lo


@dataclass
class FeasibilityReport:
    p: float
    gamma1: float
    gamma2: float
    c_f: float
    gamma_condition_value: float
    feasible: bool
    lambda_at_zero: float
    delta_max: float
    delta_used: float

    def lam(self, delta):
        if self.p > 1:
            return contraction_lambda(delta, self.p, self.c_f, self.gamma1, self.gamma2)
        return p1_lambda(delta, self.c_f, self.gamma1, self.gamma2)

    def as_dict(self):
        return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in self.__dict__.items()}


def feasibility_report(p: float, c_f: float, gamma1: float, gamma2: float, safety: float = 0.9) -> FeasibilityReport:
    if p > 1:
        value, feasible = gamma_condition(p, gamma1, gamma2)
        lam0 = contraction_lambda(0.0, p, c_f, gamma1, gamma2)
    else:
        value = lam0 = gamma1 + gamma2
        feasible = value < 1
    if feasible:
        dmax = admissible_delta(p, c_f, gamma1, gamma2, safety=1.0)
        dused = admissible_delta(p, c_f, gamma1, gamma2, safety=safety)
    else:
        dmax = dused = 0.0
    return FeasibilityReport(p, gamma1, gamma2, c_f, value, feasible, lam0, dmax, dused)


def _problem_feasibility(problem: ProblemSpec, safety=0.9) -> FeasibilityReport:
    return feasibility_report(problem.p_exponent, problem.driver.c_f, problem.obstacle.gamma1,
                              problem.obstacle.gamma2, safety)


# -- exponential change of variables -------------------------------------------------


def theta_transform(problem: ProblemSpec, theta: float) -> ProblemSpec:
    """Rewrite the problem for ``Ybar_t = exp(theta t) Y_t``.

    The new driver is ``exp(theta t) f(t, x, exp(-theta t) y, exp(-theta t) z,
    law / exp(theta t)) - theta y``, so its y-slope is shifted by ``-theta``;
    a negative ``theta`` below ``-lip_y`` makes it nondecreasing in ``y``.
    The obstacle becomes time dependent and the terminal value is scaled by
    ``exp(theta T)``.
    """
    if theta == 0:
        return problem
    drv, obs, term = problem.driver, problem.obstacle, problem.terminal
    T = problem.grid.horizon
    f, h, g = drv.func, obs.func, term.func

    def F(t, x, y, z, law):
        e = np.exp(theta * t)
        return e * f(t, x, y / e, z / e, law.scaled(1.0 / e)) - theta * y

    dom = None
    if drv.domination is not None:
        phi = drv.domination.func

        def Phi(t, x, y, law):
            e = np.exp(theta * t)
            return e * phi(t, x, y / e, law.scaled(1.0 / e)) - theta * y

        dom = DominationSpec(Phi, drv.domination.lip_y + abs(theta), drv.domination.lip_m)

    new_driver = DriverSpec(
        F,
        lip_y=drv.lip_y + abs(theta),
        lip_z=drv.lip_z,
        lip_m=drv.lip_m,
        monotone_in_m=drv.monotone_in_m,
        monotone_in_y=theta <= -drv.lip_y or (drv.monotone_in_y and theta <= 0),
        domination=dom,
    )
    if obs.absent:
        new_obstacle = obs
    else:
        def H(t, x, y, law):
            e = np.exp(theta * t)
            return e * h(t, x, y / e, law.scaled(1.0 / e))

        new_obstacle = replace(obs, func=H)
    eT = math.exp(theta * T)
    new_terminal = TerminalSpec(lambda x_T: eT * np.asarray(g(x_T), dtype=float))
    return replace(problem, driver=new_driver, obstacle=new_obstacle, terminal=new_terminal,
                   name=f"{problem.name}[theta={theta:g}]")


def _scale_bundle(bundle: SolutionBundle, theta: float) -> SolutionBundle:
    from .lawtools import LawCurve

    t = bundle.grid.times
    e = np.exp(theta * t)
    y = [v * e[i] for i, v in enumerate(bundle.y)]
    z = [v * e[i] for i, v in enumerate(bundle.z)]
    dk = [v * e[i] for i, v in enumerate(bundle.dk)]
    curve = LawCurve(lv.scaled(e[i]) for i, lv in enumerate(bundle.law_curve))
    diag = dict(bundle.diagnostics)
    pathwise = [v * e[i] for i, v in enumerate(bundle.pathwise)]
    return replace(bundle, y=y, z=z, dk=dk, law_curve=curve, diagnostics=diag, pathwise=pathwise,
                   iterates=[_scale_bundle(b, theta) for b in bundle.iterates])


def transform_bundle(bundle: SolutionBundle, theta: float) -> SolutionBundle:
    """Map a solution of the original problem to the transformed one."""
    return _scale_bundle(bundle, theta)


def untransform(bundle: SolutionBundle, theta: float) -> SolutionBundle:
    """Inverse of :func:`transform_bundle`: scale ``Y, Z, dK`` by ``exp(-theta t_i)``."""
    return _scale_bundle(bundle, -theta)


def kappa_transform(obstacle: ObstacleSpec, kappa: float, p: float = 2.0):
    """Replace ``h`` by ``(h + kappa g1 y) / (1 + kappa g1)``.

    The constraint ``y >= h`` and its reflection threshold are unchanged, the
    new obstacle is nondecreasing in ``y`` once ``kappa >= 1``, and its
    Lipschitz constants are ``((1+kappa) g1, g2) / (1 + kappa g1)``.
    Returns the new obstacle together with its feasibility report.
    """
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    g1, g2 = obstacle.gamma1, obstacle.gamma2
    s = kappa * g1
    if s == 0 or obstacle.absent:
        new = obstacle
    else:
        h = obstacle.func

        def psi(t, x, y, law):
            return (h(t, x, y, law) + s * y) / (1.0 + s)

        new = replace(
            obstacle,
            func=psi,
            gamma1=(g1 + s) / (1.0 + s),
            gamma2=g2 / (1.0 + s),
            monotone_in_y=obstacle.monotone_in_y or kappa >= 1,
        )
    if p > 1:
        rep = feasibility_report(p, 0.0, new.gamma1, new.gamma2)
    else:
        rep = feasibility_report(1.0, 0.0, new.gamma1, new.gamma2)
    return new, rep


# -- empirical linearisation -----------------------------------------------------------


@dataclass
class LinearizationReport:
    a_f: float
    b_f: float
    a_h: float
    b_h: float
    bounds: dict

    def as_dict(self):
        return {"a_f": self.a_f, "b_f": self.b_f, "a_h": self.a_h, "b_h": self.b_h, "bounds": self.bounds}


def _slope(num, den):
    out = np.zeros(np.broadcast(num, den).shape)
    nz = np.broadcast_to(den, out.shape) != 0
    out[nz] = (np.broadcast_to(num, out.shape)[nz]) / np.broadcast_to(den, out.shape)[nz]
    return out


def linearization_diagnostic(bundle: SolutionBundle, problem: ProblemSpec, slack: float = 1e-12) -> LinearizationReport:
    """Largest empirical linearisation coefficients of ``f`` and ``h`` along a solution.

    ``a_f = (f(Y, m) - f(0, m)) / Y`` and ``b_f = (f(0, m) - f(0, 0)) / m``,
    set to zero where the denominator vanishes; likewise for ``h``.  Raises
    :class:`BoundViolation` when a coefficient exceeds its declared constant.
    """
    drv, obs = problem.driver, problem.obstacle
    times = bundle.grid.times
    zero = LawView.point(0.0)
    a_f = b_f = a_h = b_h = 0.0
    for i, (y, x, law) in enumerate(zip(bundle.y, bundle.states, bundle.law_curve)):
        t = times[i]
        m = law.mean
        z = bundle.z[i] if i < len(bundle.z) else np.zeros_like(y)
        f_ym = np.asarray(drv(t, x, y, z, law), dtype=float)
        f_0m = np.asarray(drv(t, x, np.zeros_like(y), z, law), dtype=float)
        f_00 = np.asarray(drv(t, x, np.zeros_like(y), z, zero), dtype=float)
        a_f = max(a_f, float(np.max(np.abs(_slope(f_ym - f_0m, y)))))
        b_f = max(b_f, float(np.max(np.abs(_slope(f_0m - f_00, m)))))
        if not obs.absent:
            h_ym = np.asarray(obs(t, x, y, law), dtype=float)
            h_0m = np.asarray(obs(t, x, np.zeros_like(y), law), dtype=float)
            h_00 = np.asarray(obs(t, x, np.zeros_like(y), zero), dtype=float)
            a_h = max(a_h, float(np.max(np.abs(_slope(h_ym - h_0m, y)))))
            b_h = max(b_h, float(np.max(np.abs(_slope(h_0m - h_00, m)))))
    bounds = {"a_f": drv.lip_y, "b_f": drv.lip_m, "a_h": obs.gamma1, "b_h": obs.gamma2}
    report = LinearizationReport(a_f, b_f, a_h, b_h, bounds)
    for name, value in (("a_f", a_f), ("b_f", b_f), ("a_h", a_h), ("b_h", b_h)):
        if value > bounds[name] + slack:
            raise BoundViolation(f"coefficient {name} = {value:.6g} exceeds declared bound {bounds[name]:.6g}",
                                 coefficient=name, value=value)
    return report
