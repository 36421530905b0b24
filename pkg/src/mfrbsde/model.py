"""Problem description types, path simulation and assumption checks.

A problem is the triple (driver, terminal payoff, obstacle) on a time grid,
with randomness entering through a one-dimensional Markov forward state
``X`` driven by a Brownian motion ``B``.  Coefficient functions are
vectorised over numpy arrays and receive the current marginal law of ``Y``
as a :class:`LawView`.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = [
    "TimeGrid",
    "ForwardModel",
    "LawView",
    "DriverSpec",
    "DominationSpec",
    "ObstacleSpec",
    "TerminalSpec",
    "ProblemSpec",
    "PathEnsemble",
    "SolutionBundle",
    "Check",
    "ValidationReport",
    "simulate_paths",
    "validate",
]


@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    steps: int

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError("steps must be a positive integer")
        object.__setattr__(self, "steps", int(self.steps))

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def times(self) -> np.ndarray:
        t = np.arange(self.steps + 1) * self.dt
        t[-1] = self.horizon
        return t


_FORWARD_KINDS = ("brownian", "arithmetic_bm", "geometric_bm")


@dataclass(frozen=True)
class ForwardModel:
    """One-dimensional forward state, an exact function of ``(t, B_t)``.

    ``brownian`` is ``x0 + B``; ``arithmetic_bm`` is ``x0 + drift t + vol B``;
    ``geometric_bm`` is ``x0 exp((drift - vol^2/2) t + vol B)``.
    """

    kind: str = "brownian"
    x0: float = 0.0
    drift: float = 0.0
    vol: float = 1.0

    def __post_init__(self):
        if self.kind not in _FORWARD_KINDS:
            raise ValueError(f"unknown forward kind {self.kind!r}")
        if self.kind == "brownian" and (self.drift != 0.0 or self.vol != 1.0):
            raise ValueError("brownian forward has drift 0 and vol 1")
        if self.vol < 0:
            raise ValueError("vol must be nonnegative")
        if self.kind == "geometric_bm" and not self.x0 > 0:
            raise ValueError("geometric_bm requires x0 > 0")

    def state(self, t, b):
        """Map time and Brownian value to the forward state."""
        t = np.asarray(t, dtype=float)
        b = np.asarray(b, dtype=float)
        if self.kind == "brownian":
            return self.x0 + b
        if self.kind == "arithmetic_bm":
            return self.x0 + self.drift * t + self.vol * b
        return self.x0 * np.exp((self.drift - 0.5 * self.vol**2) * t + self.vol * b)


@dataclass(frozen=True, eq=False)
class LawView:
    """Summary of a one-dimensional marginal law: mean plus sorted support.

    ``weights`` is ``None`` for an empirical law with equal masses; lattice
    laws carry their node probabilities.
    """

    mean: float
    sample: np.ndarray
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        s = np.asarray(self.sample, dtype=float).reshape(-1)
        if s.size == 0:
            raise ValueError("empty sample")
        if s.size > 1 and np.any(np.diff(s) < 0):
            raise ValueError("sample must be sorted ascending")
        object.__setattr__(self, "sample", s)
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float).reshape(-1)
            if w.shape != s.shape:
                raise ValueError("weights and sample differ in length")
            if np.any(w < 0) or not math.isclose(w.sum(), 1.0, rel_tol=0, abs_tol=1e-9):
                raise ValueError("weights must be a probability vector")
            object.__setattr__(self, "weights", w)
            m = float(np.dot(w, s))
        else:
            m = float(s.mean())
        scale = max(1.0, float(np.max(np.abs(s))))
        if not abs(m - self.mean) <= 1e-9 * scale:
            raise ValueError(f"mean {self.mean} inconsistent with sample mean {m}")
        object.__setattr__(self, "mean", float(self.mean))

    @classmethod
    def point(cls, value: float) -> "LawView":
        return cls(float(value), np.array([float(value)]))

    @classmethod
    def from_values(cls, values, weights=None) -> "LawView":
        v = np.asarray(values, dtype=float).reshape(-1)
        if weights is None:
            return cls(float(v.mean()), np.sort(v))
        order = np.argsort(v, kind="stable")
        w = np.asarray(weights, dtype=float).reshape(-1)[order]
        return cls(float(np.dot(w, v[order])), v[order], w)

    def scaled(self, factor: float) -> "LawView":
        """Law of ``factor * Y`` for ``factor > 0``."""
        return LawView(self.mean * factor, self.sample * factor, self.weights)

    @property
    def size(self) -> int:
        return self.sample.size


@dataclass(frozen=True)
class DominationSpec:
    """z-free upper bound ``f(t,x,y,z,law) <= func(t,x,y,law)``."""

    func: Callable
    lip_y: float
    lip_m: float

    def __call__(self, t, x, y, law):
        return self.func(t, x, y, law)


@dataclass(frozen=True)
class DriverSpec:
    func: Callable
    lip_y: float = 0.0
    lip_z: float = 0.0
    lip_m: float = 0.0
    monotone_in_m: bool = True
    monotone_in_y: bool = False
    domination: Optional[DominationSpec] = None

    def __post_init__(self):
        for name in ("lip_y", "lip_z", "lip_m"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    @property
    def c_f(self) -> float:
        return max(self.lip_y, self.lip_z, self.lip_m)

    def __call__(self, t, x, y, z, law):
        return self.func(t, x, y, z, law)


@dataclass(frozen=True)
class ObstacleSpec:
    """Lower barrier ``h(t, x, y, law)``.

    The constraint set ``{y >= h(t, x, y, law)}`` is a half line because the
    declared y-Lipschitz constant ``gamma1`` is below one.  ``state_dependent``
    may be cleared when ``h`` ignores ``x``, letting solvers compute a single
    reflection threshold per time step.
    """

    func: Callable
    gamma1: float = 0.0
    gamma2: float = 0.0
    monotone_in_y: bool = True
    monotone_in_m: bool = True
    state_dependent: bool = True
    absent: bool = False

    def __post_init__(self):
        if self.gamma1 < 0 or self.gamma2 < 0:
            raise ValueError("gamma1 and gamma2 must be nonnegative")
        if not self.gamma1 < 1:
            raise ValueError(
                f"gamma1 = {self.gamma1} violates gamma1 < 1: the reflection threshold "
                "is not well defined"
            )

    @classmethod
    def none(cls) -> "ObstacleSpec":
        """Stand-in for an unconstrained problem."""
        return cls(lambda t, x, y, law: np.full(np.shape(y), -np.inf), state_dependent=False, absent=True)

    def __call__(self, t, x, y, law):
        return self.func(t, x, y, law)


@dataclass(frozen=True)
class TerminalSpec:
    func: Callable

    def __call__(self, x_T):
        return np.asarray(self.func(x_T), dtype=float)


@dataclass(frozen=True)
class ProblemSpec:
    grid: TimeGrid
    forward: ForwardModel
    driver: DriverSpec
    obstacle: ObstacleSpec
    terminal: TerminalSpec
    p_exponent: float = 2.0
    name: str = "custom"

    def __post_init__(self):
        if not self.p_exponent >= 1:
            raise ValueError("p_exponent must be >= 1")

    def with_grid(self, grid: TimeGrid) -> "ProblemSpec":
        from dataclasses import replace

        return replace(self, grid=grid)


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    dB: np.ndarray
    x: np.ndarray
    seed: int

    @property
    def paths(self) -> int:
        return self.dB.shape[0]


_BLOCK = 8192


def _simulate_block(seed, block, n, steps, dt):
    rng = np.random.default_rng(np.random.SeedSequence([seed, block]))
    return rng.standard_normal((n, steps)) * math.sqrt(dt)


def simulate_paths(forward: ForwardModel, grid: TimeGrid, paths: int, seed: int, threads: int = 1) -> PathEnsemble:
    """Simulate Brownian increments and the exact forward states.

    Paths are generated in fixed blocks of 8192, each with its own
    ``SeedSequence([seed, block])`` stream, so the ensemble does not depend
    on ``threads``.
    """
    if paths < 1:
        raise ValueError("paths must be >= 1")
    starts = list(range(0, paths, _BLOCK))
    jobs = [(seed, b, min(_BLOCK, paths - s), grid.steps, grid.dt) for b, s in enumerate(starts)]
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            blocks = list(pool.map(lambda a: _simulate_block(*a), jobs))
    else:
        blocks = [_simulate_block(*a) for a in jobs]
    # column-major storage: the solvers read one time step (a column) at a time
    dB = np.asfortranarray(np.vstack(blocks))
    b = np.zeros((paths, grid.steps + 1), order="F")
    np.cumsum(dB, axis=1, out=b[:, 1:])
    x = np.asfortranarray(forward.state(grid.times[None, :], b), dtype=float)
    return PathEnsemble(dB=dB, x=x, seed=int(seed))


@dataclass(eq=False)
class SolutionBundle:
    """Discrete solution ``(Y, Z, dK)`` on a Monte Carlo ensemble or a lattice.

    Arrays are stored per time index: ``y[i]`` holds the values at ``t_i`` over
    paths (Monte Carlo) or nodes (lattice) with probabilities ``weights[i]``.
    ``z`` and ``dk`` have one entry per step ``i = 0..N-1``.  Monte Carlo
    solutions with realised regression targets also keep the pathwise
    (realised) values in ``pathwise``.
    """

    grid: TimeGrid
    y: list
    z: list
    dk: list
    weights: list
    states: list
    law_curve: object
    diagnostics: dict = field(default_factory=dict)
    kind: str = "mc"
    iterates: list = field(default_factory=list)
    pathwise: list = field(default_factory=list)

    def mean_curve(self) -> np.ndarray:
        return np.array([float(np.dot(w, v)) for w, v in zip(self.weights, self.y)])

    def std_curve(self) -> np.ndarray:
        out = []
        for w, v in zip(self.weights, self.y):
            m = np.dot(w, v)
            out.append(math.sqrt(max(float(np.dot(w, (v - m) ** 2)), 0.0)))
        return np.array(out)

    def mean_se_curve(self) -> np.ndarray:
        """Monte Carlo standard error of ``E[Y_{t_i}]``; zero on a lattice.

        With realised regression targets the spread of the pathwise values
        (which carry the accumulated regression noise of later steps) is used,
        otherwise the spread of the fitted values.
        """
        if self.kind == "lattice":
            return np.zeros(len(self.y))
        src = self.pathwise if self.pathwise else self.y
        return np.array([float(np.std(v)) / math.sqrt(v.size) for v in src])

    def mean_k_curve(self) -> np.ndarray:
        """``E[K_{t_i}]`` with ``K_0 = 0``."""
        inc = [float(np.dot(w, d)) for w, d in zip(self.weights[:-1], self.dk)]
        return np.concatenate([[0.0], np.cumsum(inc)])

    def mean_z_curve(self) -> np.ndarray:
        return np.array([float(np.dot(w, z)) for w, z in zip(self.weights[:-1], self.z)])

    def y_matrix(self) -> np.ndarray:
        """``[paths x (N+1)]`` matrix; lattice columns are padded with NaN."""
        rows = max(v.size for v in self.y)
        out = np.full((rows, len(self.y)), np.nan)
        for i, v in enumerate(self.y):
            out[: v.size, i] = v
        return out


@dataclass
class Check:
    name: str
    passed: bool
    worst: float = 0.0
    witness: dict = field(default_factory=dict)
    note: str = ""


@dataclass
class ValidationReport:
    checks: list
    applicability: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list:
        return [c for c in self.checks if not c.passed]

    def __getitem__(self, name):
        for c in self.checks + self.applicability:
            if c.name == name:
                return c
        raise KeyError(name)

    def summary(self) -> str:
        lines = []
        for c in self.checks:
            lines.append(f"[{'PASS' if c.passed else 'FAIL'}] {c.name}: worst={c.worst:.3g} {c.note}".rstrip())
        for c in self.applicability:
            lines.append(f"[{'holds' if c.passed else 'violated'}] {c.name} {c.note}".rstrip())
        return "\n".join(lines)


def _ratio_check(name, num, den, bound, points):
    ok = den > 1e-12
    ratios = np.zeros_like(num)
    ratios[ok] = np.abs(num[ok]) / den[ok]
    k = int(np.argmax(ratios))
    worst = float(ratios[k])
    passed = worst <= bound * (1 + 1e-9) + 1e-9
    return Check(name, passed, worst, {key: float(v[k]) for key, v in points.items()}, f"declared {bound:g}")


def _monotone_probe(name, lo, hi, points, declared=None):
    gap = lo - hi
    k = int(np.argmax(gap))
    worst = max(float(gap[k]), 0.0)
    observed = worst <= 1e-12
    witness = {key: float(v[k]) for key, v in points.items()}
    if declared is None:
        return Check(name, observed, worst, witness)
    note = f"declared {declared}, observed {observed}"
    return Check(name, (not declared) or observed, worst, witness, note)


def validate(problem: ProblemSpec, samples: int = 10_000, box: float = 5.0, seed: int = 0) -> ValidationReport:
    """Probe the standing assumptions of ``problem`` on random points.

    Returns a report whose ``checks`` cover terminal compatibility, the
    declared Lipschitz bounds, declared monotonicity flags, ``gamma1 < 1`` and
    the contraction condition for the declared exponent.  ``applicability``
    records which monotonicity hypotheses of the penalization and comparison
    results actually hold; those entries are informational.
    """
    from .analysis import gamma_condition

    rng = np.random.default_rng(seed)
    grid, drv, obs = problem.grid, problem.driver, problem.obstacle
    ens = simulate_paths(problem.forward, grid, max(samples, 2), seed)
    checks, applicability = [], []

    xi = problem.terminal(ens.x[:, -1])
    law_xi = LawView.from_values(xi)
    if obs.absent:
        checks.append(Check("terminal_compatibility", True, 0.0, note="no obstacle"))
    else:
        gap = obs(grid.horizon, ens.x[:, -1], xi, law_xi) - xi
        k = int(np.argmax(gap))
        checks.append(Check("terminal_compatibility", bool(gap[k] <= 1e-12), max(float(gap[k]), 0.0),
                            {"x_T": float(ens.x[k, -1]), "xi": float(xi[k])}))

    n = samples
    col = rng.integers(0, grid.steps + 1, n)
    t = grid.times[col]
    x = ens.x[rng.integers(0, ens.paths, n), col]
    y1, y2 = rng.uniform(-box, box, (2, n))
    z1, z2 = rng.uniform(-box, box, (2, n))
    m1, m2 = rng.uniform(-box, box, (2, n))

    def f(y, z, m):
        return np.array([float(drv(t[k], x[k], y[k], z[k], LawView.point(m[k]))) for k in range(n)])

    def h(y, m):
        return np.array([float(obs(t[k], x[k], y[k], LawView.point(m[k]))) for k in range(n)])

    fy1, fy2 = f(y1, z1, m1), f(y2, z1, m1)
    fz2 = f(y1, z2, m1)
    fm2 = f(y1, z1, m2)
    pts = {"t": t, "x": x, "y": y1, "z": z1, "m": m1}
    checks.append(_ratio_check("driver_lipschitz_y", fy1 - fy2, np.abs(y1 - y2), drv.lip_y, pts))
    checks.append(_ratio_check("driver_lipschitz_z", fy1 - fz2, np.abs(z1 - z2), drv.lip_z, pts))
    checks.append(_ratio_check("driver_lipschitz_m", fy1 - fm2, np.abs(m1 - m2), drv.lip_m, pts))

    lo_y, hi_y = np.minimum(y1, y2), np.maximum(y1, y2)
    lo_m, hi_m = np.minimum(m1, m2), np.maximum(m1, m2)
    f_lo_m, f_hi_m = f(y1, z1, lo_m), f(y1, z1, hi_m)
    f_lo_y, f_hi_y = f(lo_y, z1, m1), f(hi_y, z1, m1)
    checks.append(_monotone_probe("driver_monotone_in_m_flag", f_lo_m, f_hi_m, pts, drv.monotone_in_m))
    checks.append(_monotone_probe("driver_monotone_in_y_flag", f_lo_y, f_hi_y, pts, drv.monotone_in_y))
    applicability.append(_monotone_probe("f_nondecreasing_in_m", f_lo_m, f_hi_m, pts))
    applicability.append(_monotone_probe("f_nondecreasing_in_y", f_lo_y, f_hi_y, pts))

    if drv.domination is not None:
        dom = np.array([float(drv.domination(t[k], x[k], y1[k], LawView.point(m1[k]))) for k in range(n)])
        applicability.append(_monotone_probe("domination_f_le_phi", fy1, dom, pts))

    if not obs.absent:
        hy1, hy2, hm2 = h(y1, m1), h(y2, m1), h(y1, m2)
        checks.append(_ratio_check("obstacle_lipschitz_y", hy1 - hy2, np.abs(y1 - y2), obs.gamma1, pts))
        checks.append(_ratio_check("obstacle_lipschitz_m", hy1 - hm2, np.abs(m1 - m2), obs.gamma2, pts))
        h_lo_y, h_hi_y = h(lo_y, m1), h(hi_y, m1)
        h_lo_m, h_hi_m = h(y1, lo_m), h(y1, hi_m)
        checks.append(_monotone_probe("obstacle_monotone_in_y_flag", h_lo_y, h_hi_y, pts, obs.monotone_in_y))
        checks.append(_monotone_probe("obstacle_monotone_in_m_flag", h_lo_m, h_hi_m, pts, obs.monotone_in_m))
        applicability.append(_monotone_probe("h_nondecreasing_in_y", h_lo_y, h_hi_y, pts))
        applicability.append(_monotone_probe("h_nondecreasing_in_m", h_lo_m, h_hi_m, pts))

    checks.append(Check("gamma1_below_one", obs.gamma1 < 1, obs.gamma1))
    p = problem.p_exponent
    if p > 1:
        value, feasible = gamma_condition(p, obs.gamma1, obs.gamma2)
        checks.append(Check("contraction_condition", feasible, value, note=f"p={p:g}"))
    else:
        value = obs.gamma1 + obs.gamma2
        checks.append(Check("contraction_condition", value < 1, value, note="p=1: gamma1+gamma2<1"))
    return ValidationReport(checks, applicability)
