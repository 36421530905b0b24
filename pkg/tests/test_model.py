import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mfrbsde import (
    DriverSpec,
    ForwardModel,
    LawView,
    ObstacleSpec,
    ProblemSpec,
    TerminalSpec,
    TimeGrid,
    insurance_problem,
    simulate_paths,
    validate,
)


def test_time_grid_basics():
    g = TimeGrid(2.0, 8)
    assert g.dt == 0.25
    assert g.times[0] == 0.0 and g.times[-1] == 2.0
    assert np.all(np.diff(g.times) > 0)


@pytest.mark.parametrize("horizon, steps", [(0.0, 5), (-1.0, 5), (1.0, 0), (1.0, 2.5)])
def test_time_grid_rejects(horizon, steps):
    with pytest.raises(ValueError):
        TimeGrid(horizon, steps)


def test_forward_model_rejects_bad_parameters():
    with pytest.raises(ValueError):
        ForwardModel("arithmetic_bm", vol=-0.1)
    with pytest.raises(ValueError):
        ForwardModel("geometric_bm", x0=0.0)
    with pytest.raises(ValueError):
        ForwardModel("ornstein")


def test_law_view_checks_mean_and_order():
    LawView(2.0, np.array([1.0, 3.0]))
    with pytest.raises(ValueError):
        LawView(2.0, np.array([3.0, 1.0]))
    with pytest.raises(ValueError):
        LawView(2.5, np.array([1.0, 3.0]))
    with pytest.raises(ValueError):
        LawView(0.0, np.array([]))


def test_law_view_weighted():
    lv = LawView.from_values([3.0, 1.0], weights=[0.25, 0.75])
    assert list(lv.sample) == [1.0, 3.0]
    assert list(lv.weights) == [0.75, 0.25]
    assert lv.mean == pytest.approx(1.5)


def test_obstacle_with_unit_slope_is_rejected():
    with pytest.raises(ValueError, match="gamma1"):
        ObstacleSpec(lambda t, x, y, law: y + 1.0, gamma1=1.0)


def _const_problem(obstacle, xi=1.0):
    return ProblemSpec(TimeGrid(1.0, 10), ForwardModel(), DriverSpec(lambda t, x, y, z, law: 0.0 * y),
                       obstacle, TerminalSpec(lambda x: np.full(np.shape(x), xi)))


def test_terminal_compatibility_passes_for_small_mean_obstacle():
    obs = ObstacleSpec(lambda t, x, y, law: 0.3 * law.mean + 0.0 * y, gamma2=0.3)
    rep = validate(_const_problem(obs), samples=500)
    assert rep["terminal_compatibility"].passed
    assert rep.passed


def test_terminal_compatibility_failure_is_reported():
    obs = ObstacleSpec(lambda t, x, y, law: 2.0 + 0.0 * y)
    rep = validate(_const_problem(obs), samples=200)
    assert not rep["terminal_compatibility"].passed
    assert rep["terminal_compatibility"].worst == pytest.approx(1.0)


def test_misdeclared_lipschitz_constant_is_caught():
    drv = DriverSpec(lambda t, x, y, z, law: 2.0 * y, lip_y=1.0)
    p = ProblemSpec(TimeGrid(1.0, 10), ForwardModel(), drv, ObstacleSpec.none(),
                    TerminalSpec(lambda x: np.ones(np.shape(x))))
    rep = validate(p, samples=300)
    assert not rep["driver_lipschitz_y"].passed
    assert rep["driver_lipschitz_y"].worst == pytest.approx(2.0)


def test_insurance_defaults_validate():
    p = insurance_problem()
    assert p.obstacle.gamma1 == pytest.approx(0.01, rel=1e-9)
    assert p.obstacle.gamma2 == 0.5
    assert p.driver.lip_y == pytest.approx(0.08)
    assert p.driver.lip_m == pytest.approx(0.05)
    rep = validate(p, samples=10_000)
    assert rep.passed, rep.summary()
    # beta > 0: the max term makes f decrease in the mean, and the report says so
    assert not rep["f_nondecreasing_in_m"].passed
    assert not p.driver.monotone_in_m


def test_insurance_zeroed_coefficients():
    p = insurance_problem(alpha=0.0, beta=0.0, delta_rate=0.0, c=lambda y: 0.0 * np.asarray(y), u=1.0, mu=0.5)
    law = LawView.point(3.0)
    y = np.array([-1.0, 0.0, 2.0])
    assert np.all(p.driver(0.3, 1.0, y, 0.0, law) == 0.0)
    assert np.allclose(p.obstacle(0.3, 1.0, y, law), 1.0 + 0.5 * 2.0)
    assert p.obstacle.gamma1 == 0.0


def test_insurance_linear_reserve():
    p = insurance_problem(alpha=0.2, beta=0.0, theta=0.0, delta_rate=0.04)
    y = np.linspace(-2, 2, 5)
    assert np.allclose(p.driver(0.5, 1.0, y, 0.0, LawView.point(0.7)), 0.2 - 0.04 * y)
    assert p.driver.monotone_in_m


@pytest.mark.parametrize("mu", [0.0, 1.0, 1.5])
def test_insurance_mu_range(mu):
    with pytest.raises(ValueError):
        insurance_problem(mu=mu)


def test_simulate_single_brownian_step():
    ens = simulate_paths(ForwardModel("brownian"), TimeGrid(1.0, 1), 1, seed=3)
    assert ens.x[0, 0] == 0.0
    assert ens.x[0, 1] == ens.dB[0, 0]


def test_simulate_degenerate_geometric():
    ens = simulate_paths(ForwardModel("geometric_bm", x0=2.0, drift=0.0, vol=0.0), TimeGrid(1.0, 7), 50, seed=1)
    assert np.all(ens.x == 2.0)


def test_simulate_terminal_mean_clt():
    T = 1.0
    ens = simulate_paths(ForwardModel("brownian"), TimeGrid(T, 50), 100_000, seed=5)
    assert abs(ens.x[:, -1].mean()) <= 4 * math.sqrt(T) / 10**2.5
    assert ens.dB.var() == pytest.approx(T / 50, rel=0.01)


def test_simulate_exact_transitions():
    fwd = ForwardModel("geometric_bm", x0=1.5, drift=0.03, vol=0.25)
    g = TimeGrid(2.0, 20)
    ens = simulate_paths(fwd, g, 100, seed=9)
    b = np.concatenate([np.zeros((100, 1)), np.cumsum(ens.dB, axis=1)], axis=1)
    expected = 1.5 * np.exp((0.03 - 0.5 * 0.25**2) * g.times + 0.25 * b)
    assert np.allclose(ens.x, expected, rtol=1e-13)


@given(seed=st.integers(0, 2**31), threads=st.integers(2, 6))
def test_simulation_independent_of_threads(seed, threads):
    fwd = ForwardModel("arithmetic_bm", x0=0.5, drift=0.1, vol=0.3)
    g = TimeGrid(1.0, 3)
    a = simulate_paths(fwd, g, 20_000, seed, threads=1)
    b = simulate_paths(fwd, g, 20_000, seed, threads=threads)
    assert np.array_equal(a.dB, b.dB) and np.array_equal(a.x, b.x)


@given(g1=st.floats(0.0, 0.95), g2=st.floats(0.0, 2.0), m=st.floats(-10, 10),
       y1=st.floats(-10, 10), y2=st.floats(-10, 10))
def test_constraint_map_strictly_increasing(g1, g2, m, y1, y2):
    # y - h(y, m) grows at rate at least 1 - gamma1 for any admissible obstacle
    obs = ObstacleSpec(lambda t, x, y, law: g1 * np.sin(y) + g2 * law.mean, gamma1=g1, gamma2=g2)
    law = LawView.point(m)
    lo, hi = min(y1, y2), max(y1, y2)
    g_lo = lo - obs(0.0, 0.0, lo, law)
    g_hi = hi - obs(0.0, 0.0, hi, law)
    assert g_hi - g_lo >= (1 - g1) * (hi - lo) - 1e-12
