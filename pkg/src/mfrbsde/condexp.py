"""Conditional expectation engines.

Two engines share one interface: :class:`RegressionEngine` projects
next-step values on polynomials of the forward state over Monte Carlo paths,
:class:`LatticeEngine` averages over the two children of a recombining
binomial tree in the Brownian motion.  :func:`discretize` binds an engine to
a grid and (for regression) a path ensemble, giving the solvers per-step
states, probabilities and the two conditional-expectation maps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .errors import MFRBSDEError
from .model import ForwardModel, PathEnsemble, TimeGrid

__all__ = ["RegressionEngine", "LatticeEngine", "fit_condexp", "estimate_z", "discretize", "Discretization"]


class RankDeficientError(MFRBSDEError):
    pass


class _Basis:
    """Standardised monomial basis fitted to one set of states, with its Gram inverse."""

    def __init__(self, states, degree, ridge, extra=None):
        x = np.asarray(states, dtype=float)
        self.extra = None
        if extra is not None:
            e = np.asarray(extra, dtype=float)
            e_sd = float(e.std())
            if e_sd > 1e-14 * max(1.0, float(np.max(np.abs(e)))):
                self.extra = (e - e.mean()) / e_sd
        self.n = x.size
        self.center, sd = float(x.mean()), float(x.std())
        self.powers = []
        self.col_mean, self.col_sd = [], []
        if sd > 1e-14 * max(1.0, abs(self.center)):
            self.scale = sd
            u = (x - self.center) / sd
            c = np.ones_like(u)
            for k in range(1, degree + 1):
                c = c * u
                c_sd = float(c.std())
                if c_sd > 0:
                    self.powers.append(k)
                    self.col_mean.append(float(c.mean()))
                    self.col_sd.append(c_sd)
        else:
            self.scale = 1.0
        self.x = x
        X = self.design()
        k = X.shape[1]
        if self.n < k:
            raise RankDeficientError(f"need at least {k} paths for a degree-{degree} basis, got {self.n}")
        gram = X.T @ X
        if ridge > 0:
            pen = np.full(k, ridge * self.n)
            pen[0] = 0.0  # the intercept is not penalised
            gram = gram + np.diag(pen)
        elif np.linalg.matrix_rank(gram) < k:
            raise RankDeficientError("rank-deficient design; use ridge > 0")
        self.gram_inv = np.linalg.inv(gram)
        self._leverage = None

    def leverage(self, X=None):
        """Diagonal of the hat matrix ``X (X'X + R)^-1 X'``, computed once per basis."""
        if self._leverage is None:
            X = self.design() if X is None else X
            self._leverage = np.einsum("ij,ij->i", X @ self.gram_inv, X)
        return self._leverage

    def design(self, x=None):
        x = self.x if x is None else np.asarray(x, dtype=float)
        k = 1 + len(self.powers) + (self.extra is not None)
        X = np.empty((x.size, k))
        X[:, 0] = 1.0
        if self.powers:
            u = (x - self.center) / self.scale
            c = np.ones_like(u)
            done = 0
            for j, (p, m, s) in enumerate(zip(self.powers, self.col_mean, self.col_sd), start=1):
                while done < p:
                    c = c * u
                    done += 1
                X[:, j] = (c - m) / s
        if self.extra is not None:
            X[:, -1] = self.extra
        return X

    # the design is rebuilt on demand rather than cached: a few vector
    # operations are cheaper than holding paths x steps x columns in memory
    def project(self, targets, X=None):
        X = self.design() if X is None else X
        return X @ (self.gram_inv @ (X.T @ np.asarray(targets, dtype=float)))


@dataclass(frozen=True)
class RegressionEngine:
    """Least-squares projection on ``1, u, ..., u^degree`` of the standardised state ``u``.

    Columns beyond the intercept are centred and scaled to unit variance and
    the normal equations carry a ridge term ``ridge * n`` on every column but
    the intercept.  States with no spread (the initial time) give an
    intercept-only fit, i.e. the sample mean.

    ``targets="realized"`` makes the solvers regress pathwise realised values
    (reset to the barrier where a path is stopped), the Longstaff-Schwartz
    convention; ``"fitted"`` regresses the previous fitted values.  With
    ``barrier_feature`` the reflected solver adds the current reflection
    threshold as one more column whenever the obstacle depends on the state.
    """

    degree: int = 3
    ridge: float = 1e-8
    targets: str = "realized"
    barrier_feature: bool = True

    kind = "mc"

    def __post_init__(self):
        if self.degree < 0:
            raise ValueError("degree must be >= 0")
        if self.ridge < 0:
            raise ValueError("ridge must be >= 0")
        if self.targets not in ("realized", "fitted"):
            raise ValueError("targets must be 'realized' or 'fitted'")

    def basis(self, states, extra=None) -> _Basis:
        return _Basis(states, self.degree, self.ridge, extra)

    def design(self, states):
        return self.basis(states).design()

    def fit_condexp(self, states, targets, basis=None, X=None):
        basis = basis or self.basis(states)
        return basis.project(targets, X)

    def estimate_z(self, states, targets, dB, dt, basis=None, X=None):
        basis = basis or self.basis(states)
        return basis.project(np.asarray(targets, dtype=float) * np.asarray(dB, dtype=float) / dt, X)

    def residual_rmse(self, states, targets, basis=None):
        """Estimated root-mean-square error of the fitted conditional expectation."""
        basis = basis or self.basis(states)
        t = np.asarray(targets, dtype=float)
        r = t - basis.project(t)
        k = basis.gram_inv.shape[0]
        return float(np.sqrt(np.mean(r**2) * k / basis.n))


@dataclass(frozen=True, eq=False)
class LatticeEngine:
    """Recombining tree in ``B``: node ``j`` at step ``i`` sits at ``(2j - i) sqrt(dt)``.

    Each step moves up (to ``j+1``) or down (to ``j``) with probability 1/2,
    matching the mean and variance of the Brownian increment exactly.
    """

    forward: ForwardModel
    grid: TimeGrid

    kind = "lattice"

    def brownian(self, i):
        return (2.0 * np.arange(i + 1) - i) * math.sqrt(self.grid.dt)

    def states(self, i):
        return np.asarray(self.forward.state(self.grid.times[i], self.brownian(i)), dtype=float)

    def weights(self, i):
        j = np.arange(i + 1)
        return np.exp(gammaln(i + 1) - gammaln(j + 1) - gammaln(i - j + 1) - i * math.log(2.0))

    def fit_condexp(self, states, targets, basis=None, X=None):
        targets = np.asarray(targets, dtype=float)
        if targets.size != np.size(states) + 1:
            raise ValueError("lattice targets must hold the children of the given nodes")
        return 0.5 * (targets[1:] + targets[:-1])

    def estimate_z(self, states, targets, dB=None, dt=None, basis=None, X=None):
        targets = np.asarray(targets, dtype=float)
        if targets.size != np.size(states) + 1:
            raise ValueError("lattice targets must hold the children of the given nodes")
        dt = self.grid.dt if dt is None else dt
        return (targets[1:] - targets[:-1]) / (2.0 * math.sqrt(dt))


def fit_condexp(engine, states, targets):
    """``E[target_{i+1} | F_i]`` evaluated at the given step-``i`` states."""
    return engine.fit_condexp(states, targets)


def estimate_z(engine, states, targets, dB=None, dt=None):
    """``E[target_{i+1} dB_i | F_i] / dt``, the discrete martingale integrand."""
    return engine.estimate_z(states, targets, dB, dt)


class Discretization:
    """An engine bound to a grid (and paths): what the backward solvers consume."""

    def __init__(self, engine, grid: TimeGrid, forward: ForwardModel, paths: PathEnsemble | None = None):
        self.engine = engine
        self.grid = grid
        self.kind = engine.kind
        if self.kind == "mc":
            if paths is None:
                raise ValueError("regression engine needs a PathEnsemble")
            if paths.dB.shape[1] != grid.steps:
                raise ValueError("path ensemble and grid disagree on the number of steps")
            self.paths = paths
            n = paths.paths
            w = np.full(n, 1.0 / n)
            self._states = [paths.x[:, i] for i in range(grid.steps + 1)]
            self._weights = [w] * (grid.steps + 1)
            self._bases = {}
            self._last_design = (None, None)
        else:
            if engine.grid != grid or engine.forward != forward:
                engine = LatticeEngine(forward, grid)
                self.engine = engine
            self.paths = None
            self._states = [engine.states(i) for i in range(grid.steps + 1)]
            self._weights = [engine.weights(i) for i in range(grid.steps + 1)]

    def states(self, i):
        return self._states[i]

    def weights(self, i):
        return self._weights[i]

    @property
    def realized(self) -> bool:
        return self.kind == "mc" and self.engine.targets == "realized"

    def basis(self, i, extra=None):
        """Regression basis at step ``i``; the polynomial one is built once and reused across passes."""
        if self.kind != "mc":
            return None
        if extra is not None:
            return self.engine.basis(self._states[i], extra)
        b = self._bases.get(i)
        if b is None:
            b = self._bases[i] = self.engine.basis(self._states[i])
        return b

    def _design(self, i):
        # the two fits made at one step share their design matrix
        if self.kind != "mc":
            return None
        if self._last_design[0] != i:
            self._last_design = (i, self.basis(i).design())
        return self._last_design[1]

    def condexp(self, i, values_next):
        return self.engine.fit_condexp(self._states[i], values_next, basis=self.basis(i), X=self._design(i))

    def z(self, i, values_next):
        dB = self.paths.dB[:, i] if self.kind == "mc" else None
        return self.engine.estimate_z(self._states[i], values_next, dB, self.grid.dt, basis=self.basis(i),
                                      X=self._design(i))

    def z_loo(self, i, values_next, z):
        """Leave-one-out version of :meth:`z`: path ``j``'s value is fitted without path ``j``.

        It does not depend on the path's own increment ``dB_i``, so ``z_loo dB_i``
        has conditional mean zero, which the in-sample ``z dB_i`` lacks (its
        mean is about ``(basis size) / paths`` per step).
        """
        if self.kind != "mc":
            return z
        h = self.basis(i).leverage(self._design(i))
        w = np.asarray(values_next, dtype=float) * self.paths.dB[:, i] / self.grid.dt
        return (z - h * w) / (1.0 - h)

    def rmse(self, i, values_next):
        if self.kind == "mc":
            return self.engine.residual_rmse(self._states[i], values_next, basis=self.basis(i))
        return 0.0


def discretize(engine, grid: TimeGrid, forward: ForwardModel, paths: PathEnsemble | None = None) -> Discretization:
    return Discretization(engine, grid, forward, paths)
