import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfrbsde import (
    ConvergenceError,
    DriverSpec,
    ForwardModel,
    GridError,
    InfeasibleError,
    LatticeEngine,
    LawCurve,
    LawView,
    ObstacleSpec,
    ProblemSpec,
    TerminalSpec,
    TimeGrid,
    american_put_problem,
    backward_pass,
    contraction_lambda,
    insurance_problem,
    linear_mf_problem,
    picard_solve,
    reflect_threshold,
    skorohod_residual,
)
from mfrbsde.oracle import american_binomial, ode_linear_solve


def lattice(p):
    return LatticeEngine(p.forward, p.grid)


def const(v):
    return lambda t, x, y, law: np.full(np.shape(y), float(v))


def zero_driver():
    return DriverSpec(lambda t, x, y, z, law: np.zeros(np.shape(y)))


def flat_problem(xi, h, steps=10, driver=None):
    obstacle = ObstacleSpec.none() if h is None else ObstacleSpec(const(h), state_dependent=False)
    return ProblemSpec(TimeGrid(1.0, steps), ForwardModel(), driver or zero_driver(), obstacle,
                       TerminalSpec(lambda x: np.full(np.shape(x), float(xi))))


def point_curve(p, m):
    return LawCurve(LawView.point(m) for _ in range(p.grid.steps + 1))


def test_threshold_examples():
    lin = ObstacleSpec(lambda t, x, y, law: 0.5 * y + 1.0, gamma1=0.5)
    assert reflect_threshold(lin, LawView.point(0.0)) == pytest.approx(2.0, abs=1e-12)
    assert reflect_threshold(ObstacleSpec(const(0.7)), LawView.point(5.0)) == 0.7
    mixed = ObstacleSpec(lambda t, x, y, law: 0.2 * y + 0.3 * law.mean, gamma1=0.2, gamma2=0.3)
    assert reflect_threshold(mixed, LawView.point(1.0)) == pytest.approx(0.375, abs=1e-12)
    assert reflect_threshold(ObstacleSpec.none(), LawView.point(0.0)) == -math.inf


@given(g1=st.floats(0.01, 0.95), shift=st.floats(-1e3, 1e3), m=st.floats(-10, 10))
def test_threshold_solves_fixed_point(g1, shift, m):
    obs = ObstacleSpec(lambda t, x, y, law: g1 * np.tanh(y) + shift + 0.1 * law.mean, gamma1=g1, gamma2=0.1)
    law = LawView.point(m)
    y = reflect_threshold(obs, law)
    assert abs(y - obs(0.0, 0.0, y, law)) <= 1e-9 * max(1.0, abs(shift))


def test_backward_pass_identity():
    p = flat_problem(1.0, 0.0)
    b = backward_pass(p, point_curve(p, 1.0), lattice(p))
    for i in range(p.grid.steps):
        assert np.all(b.y[i] == 1.0) and np.all(b.dk[i] == 0.0) and np.all(b.z[i] == 0.0)


def test_backward_pass_forced_reflection():
    # the terminal value violates the barrier: the solver still runs and pushes once
    p = flat_problem(0.0, 1.0)
    b = backward_pass(p, point_curve(p, 0.5), lattice(p))
    N = p.grid.steps
    assert np.all(b.y[N] == 0.0)
    for i in range(N):
        assert np.allclose(b.y[i], 1.0)
    assert np.allclose(b.dk[N - 1], 1.0)
    assert all(np.all(d == 0.0) for d in b.dk[: N - 1])
    assert skorohod_residual(b, p) == pytest.approx(0.0, abs=1e-14)


def test_coarse_grid_is_refused():
    drv = DriverSpec(lambda t, x, y, z, law: -5.0 * y, lip_y=5.0)
    p = flat_problem(1.0, None, steps=4, driver=drv)
    with pytest.raises(GridError, match="refine grid"):
        backward_pass(p, point_curve(p, 1.0), lattice(p))


def test_law_curve_length_mismatch():
    p = flat_problem(1.0, 0.0)
    with pytest.raises(ValueError, match="grid mismatch"):
        backward_pass(p, point_curve(p, 1.0)[:-1], lattice(p))


@pytest.mark.parametrize("rate", [0.0, 0.05])
def test_american_put_against_binomial(rate):
    p = american_put_problem(strike=1.0, vol=0.2, rate=rate, steps=50)
    b = picard_solve(p, lattice(p), tol=1e-12)
    ref = american_binomial(1.0, 0.2, rate, 1.0, 50, discount="trapezoid")
    assert b.mean_curve()[0] == pytest.approx(ref, abs=1e-12)


def test_law_free_problem_needs_one_extra_pass():
    p = american_put_problem(steps=30)
    assert picard_solve(p, lattice(p), tol=1e-8).diagnostics["picard_iters"] == 1


def test_linear_mean_field_balanced_case():
    p = linear_mf_problem(a=0.3, b=-0.3, c=0.4, xi=1.5, grid=TimeGrid(2.0, 40))
    b = picard_solve(p, lattice(p), tol=1e-13)
    assert np.allclose(b.mean_curve(), 1.5 + 0.4 * (2.0 - p.grid.times), atol=1e-11)


def test_linear_mean_field_second_order():
    def err(n):
        p = linear_mf_problem(a=0.4, b=0.3, c=-0.2, xi=1.0, grid=TimeGrid(1.0, n))
        b = picard_solve(p, lattice(p), tol=1e-14)
        return np.max(np.abs(b.mean_curve() - ode_linear_solve(0.4, 0.3, -0.2, 1.0, p.grid)))

    e1, e2 = err(25), err(50)
    assert e2 < 2e-5
    assert 3.5 < e1 / e2 < 4.5


def test_windowed_and_global_agree():
    p = insurance_problem(grid=TimeGrid(1.0, 50))
    tol = 1e-6
    a = picard_solve(p, lattice(p), tol=tol, windowing=True)
    b = picard_solve(p, lattice(p), tol=tol, windowing=False)
    assert np.max(np.abs(a.mean_curve() - b.mean_curve())) <= 10 * tol


def test_iteration_count_matches_contraction_rate():
    p = linear_mf_problem(a=2.0, b=2.0, c=0.1, xi=1.0, grid=TimeGrid(1.0, 100))
    tol = 1e-10
    b = picard_solve(p, lattice(p), tol=tol)
    d = b.diagnostics
    lam = contraction_lambda(d["delta_used"], 2.0, 2.0, 0.0, 0.0)
    assert len(d["picard_iters_per_window"]) > 1
    assert max(d["picard_iters_per_window"]) <= math.log(tol) / math.log(lam) + 2


def test_infeasible_needs_force_and_reports_distance():
    obs = ObstacleSpec(lambda t, x, y, law: 0.5 * np.sin(y) + 0.5 * law.mean - 3.0, gamma1=0.5, gamma2=0.5,
                       monotone_in_y=False, state_dependent=False)
    p = replace(linear_mf_problem(grid=TimeGrid(1.0, 20)), obstacle=obs)
    with pytest.raises(InfeasibleError):
        picard_solve(p, lattice(p))
    with pytest.raises(ConvergenceError) as exc:
        picard_solve(p, lattice(p), force=True, tol=1e-15, max_outer=2)
    assert exc.value.last_distance is not None and exc.value.last_distance > 0


def test_reflected_bundle_invariants():
    p = insurance_problem(alpha=-0.2, beta=0.0, grid=TimeGrid(1.0, 60))
    b = picard_solve(p, lattice(p), tol=1e-10)
    t = p.grid.times
    assert b.diagnostics["skorohod_residual"] <= 1e-10
    assert sum(float(np.sum(d)) for d in b.dk) > 0
    for i in range(p.grid.steps):
        law = b.law_curve[i]
        y = b.y[i]
        assert np.min(y - p.obstacle(t[i], b.states[i], y, law)) >= -1e-10
        ystar = reflect_threshold(p.obstacle, law, t[i])
        assert np.all(b.dk[i] >= 0)
        assert np.max(np.abs(b.dk[i] * (y - ystar))) <= 1e-12


def test_unreflected_residual_is_zero():
    p = linear_mf_problem(grid=TimeGrid(1.0, 20))
    assert skorohod_residual(picard_solve(p, lattice(p)), p) == 0.0


@settings(max_examples=10)
@given(eps=st.floats(0.001, 0.5))
def test_raising_the_obstacle_raises_the_solution(eps):
    p = american_put_problem(strike=1.0, vol=0.25, rate=0.03, steps=30)
    h = p.obstacle.func
    q = replace(p, obstacle=replace(p.obstacle, func=lambda t, x, y, law: h(t, x, y, law) + eps),
                terminal=TerminalSpec(lambda x: np.maximum(1.0 - x, 0.0) + eps))
    a = picard_solve(p, lattice(p), tol=1e-12)
    b = picard_solve(q, lattice(q), tol=1e-12)
    assert all(np.all(v >= u - 1e-12) for u, v in zip(a.y, b.y))


def test_wasserstein_metric_option():
    p = insurance_problem(grid=TimeGrid(1.0, 20))
    a = picard_solve(p, lattice(p), tol=1e-9, metric="wasserstein")
    b = picard_solve(p, lattice(p), tol=1e-9)
    assert np.max(np.abs(a.mean_curve() - b.mean_curve())) <= 1e-8
