import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mfrbsde import (
    BoundViolation,
    DriverSpec,
    ForwardModel,
    InfeasibleError,
    LatticeEngine,
    LawView,
    ObstacleSpec,
    ProblemSpec,
    TerminalSpec,
    TimeGrid,
    admissible_delta,
    contraction_lambda,
    gamma_condition,
    insurance_problem,
    kappa_transform,
    linear_mf_problem,
    linearization_diagnostic,
    picard_solve,
    reflect_threshold,
    theta_transform,
    transform_bundle,
    untransform,
)


def test_gamma_condition_examples():
    value, ok = gamma_condition(2, 0.0, 0.5)
    assert value == pytest.approx(0.5, rel=1e-15) and ok
    assert gamma_condition(2, 0.0, 0.0) == (0.0, True)
    value, ok = gamma_condition(2, 0.5, 0.5)
    assert value == pytest.approx(math.sqrt(2.5)) and not ok
    with pytest.raises(ValueError):
        gamma_condition(1.0, 0.1, 0.1)


@given(p=st.floats(1.1, 6), g1=st.floats(0, 0.5), g2=st.floats(0, 0.9), c_f=st.floats(0, 5))
def test_lambda_at_zero_is_gamma_condition(p, g1, g2, c_f):
    assert contraction_lambda(0.0, p, c_f, g1, g2) == gamma_condition(p, g1, g2)[0]


def test_lambda_example_and_monotone_in_delta():
    assert contraction_lambda(0.1, 2, 1.0, 0.0, 0.0) == pytest.approx(math.sqrt(0.1), rel=1e-14)
    deltas = np.linspace(0, 3, 200)
    lam = [contraction_lambda(d, 2.5, 0.7, 0.05, 0.2) for d in deltas]
    assert np.all(np.diff(lam) > 0)


def test_admissible_delta_examples():
    assert admissible_delta(1, 1.0, 0.2, 0.3, safety=1.0) == pytest.approx(0.25)
    assert admissible_delta(2, 1.0, 0.0, 0.0, safety=1.0) == pytest.approx(10**-0.5, rel=1e-11)
    assert admissible_delta(2, 1.0, 0.0, 0.0) == pytest.approx(0.9 * 10**-0.5, rel=1e-11)
    assert admissible_delta(2, 0.0, 0.1, 0.1) == math.inf
    with pytest.raises(InfeasibleError, match="no contraction window exists"):
        admissible_delta(2, 1.0, 0.5, 0.5)
    with pytest.raises(InfeasibleError):
        admissible_delta(1, 1.0, 0.5, 0.5)


@given(p=st.one_of(st.just(1.0), st.floats(1.2, 5)), c_f=st.floats(0.01, 10),
       g1=st.floats(0, 0.2), g2=st.floats(0, 0.5), safety=st.floats(0.05, 1.0))
def test_admissible_delta_contracts(p, c_f, g1, g2, safety):
    if p > 1 and not gamma_condition(p, g1, g2)[1]:
        return
    d = admissible_delta(p, c_f, g1, g2, safety)
    if p == 1:
        assert 2 * d * c_f + g1 + g2 < 1 + 1e-12
    else:
        assert contraction_lambda(d, p, c_f, g1, g2) < 1 + 1e-9


def test_gamma_condition_nondecreasing():
    grid = np.linspace(0, 0.6, 31)
    for p in (1.5, 2.0, 4.0):
        vals = np.array([[gamma_condition(p, a, b)[0] for b in grid] for a in grid])
        assert np.all(np.diff(vals, axis=0) >= 0) and np.all(np.diff(vals, axis=1) >= 0)


def test_kappa_transform_example():
    obs = ObstacleSpec(lambda t, x, y, law: 0.2 * y + 0.3 * law.mean, gamma1=0.2, gamma2=0.3)
    new, rep = kappa_transform(obs, 1.0)
    assert new.gamma1 == pytest.approx(1 / 3) and new.gamma2 == pytest.approx(0.25)
    assert rep.gamma_condition_value == pytest.approx(gamma_condition(2, 1 / 3, 0.25)[0])
    big, _ = kappa_transform(obs, 1e8)
    assert big.gamma2 < 1e-7
    with pytest.raises(ValueError):
        kappa_transform(obs, 0.0)


def test_kappa_transform_keeps_threshold():
    obs = ObstacleSpec(lambda t, x, y, law: 0.4 * np.tanh(y) + 0.3 * np.cos(law.mean) + 1.0,
                       gamma1=0.4, gamma2=0.3, monotone_in_y=True, state_dependent=False)
    rng = np.random.default_rng(2)
    for kappa in (0.5, 2.0, 7.0):
        new, _ = kappa_transform(obs, kappa)
        for m in rng.uniform(-5, 5, 100):
            law = LawView.point(m)
            assert abs(reflect_threshold(obs, law) - reflect_threshold(new, law)) <= 1e-10


def test_theta_zero_is_identity():
    p = insurance_problem(grid=TimeGrid(1.0, 20))
    assert theta_transform(p, 0.0) is p
    b = picard_solve(p, LatticeEngine(p.forward, p.grid), tol=1e-8)
    back = untransform(transform_bundle(b, 0.0), 0.0)
    for u, v in zip(b.y, back.y):
        assert np.max(np.abs(u - v)) <= 1e-12


def test_theta_shifts_slope():
    # the rewrite is for exp(theta t) Y, which shifts the y-slope by -theta
    drv = DriverSpec(lambda t, x, y, z, law: -2.0 * y, lip_y=2.0)
    p = ProblemSpec(TimeGrid(1.0, 10), ForwardModel(), drv, ObstacleSpec.none(),
                    TerminalSpec(lambda x: np.ones(np.shape(x))))
    q = theta_transform(p, -3.0)
    y = np.linspace(-3, 3, 7)
    for t in (0.0, 0.4, 1.0):
        assert np.allclose(q.driver(t, 0.0, y, 0.0, LawView.point(0.0)), y)
    assert q.driver.lip_y == 5.0


@given(theta=st.floats(-3, 3).filter(lambda v: abs(v) > 1e-3))
def test_theta_round_trip(theta):
    p = linear_mf_problem(grid=TimeGrid(1.0, 12), forward=ForwardModel("brownian"),
                          terminal=lambda x: np.asarray(x) ** 2)
    b = picard_solve(p, LatticeEngine(p.forward, p.grid), tol=1e-10)
    back = untransform(transform_bundle(b, theta), theta)
    for u, v in zip(b.y + b.z + b.dk, back.y + back.z + back.dk):
        assert np.all(np.abs(u - v) <= 1e-9 * np.maximum(1.0, np.abs(u)))


def test_theta_transformed_insurance_matches_direct():
    p = insurance_problem(alpha=-0.2, beta=0.0, grid=TimeGrid(1.0, 50))
    eng = LatticeEngine(p.forward, p.grid)
    direct = picard_solve(p, eng, tol=1e-10)
    theta = -(p.driver.c_f + 1.0)
    q = theta_transform(p, theta)
    via = untransform(picard_solve(q, LatticeEngine(q.forward, q.grid), tol=1e-10), theta)
    assert np.max(np.abs(direct.mean_curve() - via.mean_curve())) <= 1e-3


def test_linearization_linear_driver():
    obs = ObstacleSpec(lambda t, x, y, law: 0.1 * y + 0.2 * law.mean - 5.0, gamma1=0.1, gamma2=0.2)
    p = linear_mf_problem(a=0.5, b=0.2, c=0.1, grid=TimeGrid(1.0, 20), obstacle=obs,
                          terminal=lambda x: np.asarray(x, dtype=float) + 1.0)
    b = picard_solve(p, LatticeEngine(p.forward, p.grid), tol=1e-10)
    rep = linearization_diagnostic(b, p)
    assert rep.a_f == pytest.approx(0.5) and rep.b_f == pytest.approx(0.2)
    assert rep.a_h == pytest.approx(0.1) and rep.b_h == pytest.approx(0.2)


def test_linearization_zero_denominator_convention():
    # a lattice with a node at Y = 0 and mean 0: the slopes there are defined as 0
    p = linear_mf_problem(a=0.5, b=0.2, c=0.0, grid=TimeGrid(1.0, 2), terminal=lambda x: np.asarray(x, float))
    b = picard_solve(p, LatticeEngine(p.forward, p.grid), tol=1e-12)
    assert np.any(b.y[2] == 0.0)
    rep = linearization_diagnostic(b, p)
    assert np.isfinite(rep.a_f) and rep.a_f <= 0.5 + 1e-12


def test_linearization_flags_misdeclared_constant():
    drv = DriverSpec(lambda t, x, y, z, law: 0.5 * y, lip_y=0.1)
    p = ProblemSpec(TimeGrid(1.0, 10), ForwardModel(), drv, ObstacleSpec.none(),
                    TerminalSpec(lambda x: np.asarray(x, float) + 2.0))
    b = picard_solve(p, LatticeEngine(p.forward, p.grid), tol=1e-10)
    with pytest.raises(BoundViolation) as exc:
        linearization_diagnostic(b, p)
    assert exc.value.coefficient == "a_f"


def test_linearization_insurance_mc():
    from mfrbsde import RegressionEngine, simulate_paths

    p = insurance_problem()
    ens = simulate_paths(p.forward, p.grid, 10_000, seed=4)
    b = picard_solve(p, RegressionEngine(), ens, tol=1e-6)
    rep = linearization_diagnostic(b, p)
    for name, bound in rep.bounds.items():
        assert getattr(rep, name) <= bound + 1e-12
