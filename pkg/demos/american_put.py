"""An American put as a law-free special case.

Run with ``python demos/american_put.py``.  With no mean-field term the
reflected equation is an optimal stopping problem, so three independent
numbers should agree: the lattice Snell solver, a textbook binomial pricer
and the regression (least-squares Monte Carlo) solver.
"""

import time

from mfrbsde import LatticeEngine, RegressionEngine, american_put_problem, picard_solve, simulate_paths
from mfrbsde.oracle import american_binomial

STRIKE, VOL, RATE, STEPS = 40 / 36, 0.2, 0.06, 50

problem = american_put_problem(strike=STRIKE, vol=VOL, rate=RATE, steps=STEPS)

lattice = picard_solve(problem, LatticeEngine(problem.forward, problem.grid), tol=1e-12)
lattice_value = lattice.mean_curve()[0]

# The solver integrates the discounting term with the trapezoid rule, so the
# matching binomial tree discounts each step by (1 - r dt/2) / (1 + r dt/2).
matched = american_binomial(STRIKE, VOL, RATE, 1.0, STEPS, discount="trapezoid")
textbook = american_binomial(STRIKE, VOL, RATE, 1.0, STEPS)
print(f"lattice Snell solver        {lattice_value:.10f}")
print(f"binomial, matched discount  {matched:.10f}   (difference {abs(lattice_value - matched):.1e})")
print(f"binomial, exp discount      {textbook:.10f}")

start = time.perf_counter()
paths = simulate_paths(problem.forward, problem.grid, 100_000, seed=11)
mc = picard_solve(problem, RegressionEngine(degree=3), paths, tol=1e-8)
value, se = mc.mean_curve()[0], mc.mean_se_curve()[0]
print(f"regression, 1e5 paths       {value:.6f} +- {se:.6f}   "
      f"({100 * (value / textbook - 1):+.2f}% vs tree, {time.perf_counter() - start:.1f}s)")

# Exercise boundary: the largest fund value at which the lattice stops.
t = problem.grid.times
print("\nexercise boundary (largest stopped fund value):")
for i in range(0, STEPS, 10):
    stopped = lattice.states[i][lattice.dk[i] > 0]
    edge = f"{stopped.max():.4f}" if stopped.size else "none"
    print(f"  t = {t[i]:.2f}: {edge}")
