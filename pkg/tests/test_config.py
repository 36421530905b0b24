import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mfrbsde import ConfigError, LawView, ProblemError
from mfrbsde.config import DEFAULTS, analyse, compile_expr, load_config, parse_config


def custom(**problem):
    base = {"type": "custom", "driver": {"expr": 0.0}, "terminal": {"expr": 1.0}}
    base.update(problem)
    return {"problem": base}


def test_defaults():
    cfg = parse_config(custom())
    assert cfg.scheme == "snell" and cfg.engine == "lattice"
    assert cfg.tolerances == DEFAULTS["tolerances"]
    assert cfg.tolerances["picard"] == 1e-4 and cfg.tolerances["root"] == 1e-12
    assert cfg.tolerances["cross_scheme"] == 1e-3
    assert cfg.problem.obstacle.absent
    assert cfg.problem.grid.steps == 100


def test_overrides_win():
    doc = custom()
    doc["engine"] = {"kind": "lattice", "paths": 100}
    cfg = parse_config(doc, scheme="both", engine="mc", paths=500, seed=9, threads=3, out="elsewhere", force=True)
    assert (cfg.scheme, cfg.engine, cfg.paths, cfg.seed, cfg.threads, cfg.out, cfg.force) == \
        ("both", "mc", 500, 9, 3, "elsewhere", True)


@pytest.mark.parametrize("doc, path", [
    ({"problem": {"type": "custom", "driver": {"expr": 0.0}}}, "problem.terminal"),
    ({"problem": {"type": "custom", "terminal": {"expr": 0.0}}}, "problem.driver"),
    ({}, "problem"),
    ({"problem": {"type": "heston"}}, "problem.type"),
    ({"problem": {"type": "insurance", "params": {"alfa": 0.1}}}, "problem.params.alfa"),
    ({"problem": {"type": "insurance"}, "grid": {"steps": 0}}, "grid.steps"),
    ({"problem": {"type": "insurance"}, "grid": {"horizon": -1}}, "grid.horizon"),
    ({"problem": {"type": "insurance"}, "engine": {"kind": "gpu"}}, "engine.kind"),
    ({"problem": {"type": "insurance"}, "scheme": {"name": "euler"}}, "scheme.name"),
    ({"problem": {"type": "insurance"}, "scheme": {"schedule": [4, 2]}}, "scheme.schedule"),
    ({"problem": {"type": "insurance"}, "tolerances": {"picard": 0}}, "tolerances.picard"),
    ({"problem": {"type": "insurance"}, "output": {"plotdata": "yes"}}, "output.plotdata"),
    ({"problem": {"type": "insurance"}, "colour": 1}, "colour"),
    ({"problem": {"type": "american_put"}, "forward": {"kind": "brownian"}}, "forward"),
])
def test_config_errors_name_the_field(doc, path):
    with pytest.raises(ConfigError) as exc:
        parse_config(doc)
    assert exc.value.path == path
    assert str(exc.value).startswith(path)


@pytest.mark.parametrize("expr, path", [
    ({"pow": [1, 2]}, "problem.driver.expr.pow"),
    ({"sub": [1]}, "problem.driver.expr.sub"),
    ("w", "problem.driver.expr"),
    (True, "problem.driver.expr"),
    ({"table": {"var": "t", "knots": [0, 0], "values": [1, 2]}}, "problem.driver.expr.table.knots"),
])
def test_bad_expressions(expr, path):
    with pytest.raises(ConfigError) as exc:
        parse_config(custom(driver={"expr": expr}))
    assert exc.value.path == path


def test_terminal_cannot_use_y():
    with pytest.raises(ConfigError, match="not available"):
        parse_config(custom(terminal={"expr": "y"}))


def test_model_rejection_is_a_problem_error():
    doc = custom(obstacle={"expr": {"mul": [1.5, "y"]}})
    with pytest.raises(ProblemError):
        parse_config(doc)
    with pytest.raises(ProblemError):
        parse_config({"problem": {"type": "insurance", "params": {"mu": 1.5}}})


def test_expression_evaluation():
    f, _ = compile_expr({"add": [{"poly": [[2.0, {"y": 2}], [-1.0, {"m": 1}]]}, {"pos": {"sub": ["x", 1.0]}},
                                 {"neg": "z"}, {"max": ["t", 0.5]}, {"min": ["t", 0.25]}]})
    env = {"t": 0.1, "x": np.array([0.0, 3.0]), "y": np.array([1.0, -2.0]), "z": np.array([-1.0, 2.0]), "m": 0.5}
    # 2 y^2 - m + (x - 1)^+ + z^- + max(t, 0.5) + min(t, 0.25)
    expected = 2 * env["y"] ** 2 - 0.5 + np.maximum(env["x"] - 1, 0) + np.maximum(-env["z"], 0) + 0.5 + 0.1
    assert np.allclose(f(env), expected)


def test_table_interpolates_linearly():
    f, _ = compile_expr({"table": {"var": "t", "knots": [0.0, 1.0, 2.0], "values": [0.0, 2.0, 1.0]}})
    assert np.allclose(f({"t": np.array([0.5, 1.5, 3.0])}), [1.0, 1.5, 1.0])


def test_interval_analysis_examples():
    box = {"y": (-5.0, 5.0), "m": (-5.0, 5.0), "z": (-1.0, 1.0)}
    _, node = compile_expr({"poly": [[0.3, {"y": 1}], [-0.2, {"m": 1}]]})
    a = analyse(node, box, ("y", "m", "z"))
    assert a.lipschitz == {"y": 0.3, "m": 0.2, "z": 0.0}
    assert a.nondecreasing["y"] and a.nonincreasing["m"] and not a.nondecreasing["m"]
    _, node = compile_expr({"max": [{"mul": [0.1, "y"]}, "m"]})
    a = analyse(node, box, ("y", "m"))
    assert a.lipschitz["y"] == pytest.approx(0.1) and a.lipschitz["m"] == pytest.approx(1.0)
    assert a.nondecreasing["y"] and a.nondecreasing["m"]


@given(c1=st.floats(-2, 2), c2=st.floats(-2, 2), y=st.floats(-4, 4), d=st.floats(0.001, 1))
def test_interval_lipschitz_bounds_difference_quotients(c1, c2, y, d):
    expr = {"add": [{"poly": [[c1, {"y": 2}], [c2, {"y": 1}]]}, {"pos": {"mul": [c2, "y"]}}]}
    f, node = compile_expr(expr)
    lip = analyse(node, {"y": (-5.0, 5.0)}, ("y",)).lipschitz["y"]
    y2 = min(y + d, 5.0)
    if y2 > y:
        q = abs(f({"y": y2}) - f({"y": y})) / (y2 - y)
        assert q <= lip * (1 + 1e-9) + 1e-12


def test_declared_constants_override_analysis():
    cfg = parse_config(custom(driver={"expr": {"mul": [0.2, "y"]}, "lip_y": 0.5},
                              obstacle={"expr": {"mul": [0.1, "m"]}, "gamma2": 0.3}))
    assert cfg.problem.driver.lip_y == 0.5
    assert cfg.problem.obstacle.gamma2 == 0.3 and cfg.problem.obstacle.gamma1 == 0.0
    assert cfg.coefficient_analysis["driver"]["derived_lipschitz"]["y"] == pytest.approx(0.2)


def test_custom_coefficients_are_callable():
    cfg = parse_config(custom(driver={"expr": {"add": ["y", "m"]}}, obstacle={"expr": {"sub": ["x", 1.0]}},
                              terminal={"expr": {"mul": [2.0, "x"]}}))
    p = cfg.problem
    law = LawView.point(0.5)
    assert np.allclose(p.driver(0.0, np.zeros(2), np.array([1.0, 2.0]), np.zeros(2), law), [1.5, 2.5])
    assert np.allclose(p.obstacle(0.0, np.array([3.0, 4.0]), np.zeros(2), law), [2.0, 3.0])
    assert p.obstacle.state_dependent
    assert np.allclose(p.terminal(np.array([1.0, 2.0])), [2.0, 4.0])


def test_builtin_insurance():
    cfg = parse_config({"problem": {"type": "insurance", "params": {"cost": 0.02, "mu": 0.4}}})
    assert cfg.problem.obstacle.gamma1 == 0.02 and cfg.problem.obstacle.gamma2 == 0.4


def test_shipped_configs_parse():
    import pathlib

    root = pathlib.Path(__file__).resolve().parents[1] / "configs"
    names = sorted(p.name for p in root.glob("*.json"))
    assert names
    for name in names:
        try:
            load_config(root / name)
        except ProblemError:
            assert name == "infeasible.json"


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{\n  \"problem\": \n")
    with pytest.raises(ConfigError, match="line"):
        load_config(bad)
    good = tmp_path / "good.json"
    good.write_text(json.dumps(custom()))
    assert load_config(good).problem.name == "custom"
