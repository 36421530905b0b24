"""JSON run configuration: parsing, validation and problem construction.

A configuration is one JSON document with the sections ``grid``,
``forward``, ``problem``, ``scheme``, ``engine``, ``tolerances``, ``output``
and ``seed``.  Only ``problem`` is required.  Unknown keys are rejected so a
misspelt option never passes silently; every error carries the dotted path
of the offending field.

Custom coefficients are expression trees built from numbers, the variables
``t, x, y, z, m`` (``m`` is the mean of the current law) and the nodes::

    {"poly": [[coef, {"y": 1, "m": 2}], ...]}     sum of monomials
    {"add": [e, ...]}   {"mul": [e, ...]}   {"sub": [e1, e2]}
    {"max": [e, ...]}   {"min": [e, ...]}
    {"pos": e}          {"neg": e}              positive / negative part
    {"table": {"var": "t", "knots": [...], "values": [...]}}

Lipschitz constants and monotonicity flags that are not declared are derived
by interval arithmetic over an analysis box (see :func:`analyse`).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ProblemError
from .model import DriverSpec, ForwardModel, ObstacleSpec, ProblemSpec, TerminalSpec, TimeGrid
from .penalty import DEFAULT_SCHEDULE
from .problems import american_put_problem, insurance_problem, linear_mf_problem

__all__ = ["RunConfig", "load_config", "parse_config", "compile_expr", "analyse", "DEFAULTS"]

VARIABLES = ("t", "x", "y", "z", "m")

DEFAULTS = {
    "tolerances": {"picard": 1e-4, "root": 1e-12, "cross_scheme": 1e-3, "penalty": 1e-8},
    "engine": {"kind": "lattice", "paths": 10_000, "degree": 3, "ridge": 1e-8, "threads": 1},
    "output": {"dir": "out", "plotdata": True},
}

_SECTIONS = {"grid", "forward", "problem", "scheme", "engine", "tolerances", "output", "seed"}
_KEYS = {
    "grid": {"horizon", "steps"},
    "forward": {"kind", "x0", "drift", "vol"},
    "problem": {"type", "params", "driver", "obstacle", "terminal", "p", "box", "name"},
    "scheme": {"name", "schedule", "auto_theta", "auto_kappa", "kappa", "theta", "windowing", "safety",
               "metric", "max_outer", "implicit_weight"},
    "engine": {"kind", "paths", "degree", "ridge", "threads"},
    "tolerances": {"picard", "root", "cross_scheme", "penalty"},
    "output": {"dir", "plotdata"},
}
_PARAMS = {
    "insurance": {"alpha", "beta", "theta", "delta_rate", "u", "mu", "cost", "floor"},
    "american_put": {"strike", "vol", "rate", "x0"},
    "linear_mf": {"a", "b", "c", "xi"},
    "custom": set(),
}


# -- expression trees ---------------------------------------------------------------------


def _check_keys(obj, allowed, path):
    if not isinstance(obj, dict):
        raise ConfigError(f"expected an object, got {type(obj).__name__}", path)
    extra = sorted(set(obj) - set(allowed))
    if extra:
        raise ConfigError(f"unknown field {extra[0]!r}", f"{path}.{extra[0]}" if path else extra[0])


def _number(v, path, positive=False, integer=False, minimum=None):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(f"expected a finite number, got {v!r}", path)
    if integer and int(v) != v:
        raise ConfigError(f"expected an integer, got {v!r}", path)
    if positive and not v > 0:
        raise ConfigError(f"must be positive, got {v!r}", path)
    if minimum is not None and v < minimum:
        raise ConfigError(f"must be >= {minimum}, got {v!r}", path)
    return int(v) if integer else float(v)


def _node(expr, path, allowed_vars):
    """Validate ``expr`` and return ``(kind, payload)`` with children already validated."""
    if isinstance(expr, bool):
        raise ConfigError("booleans are not expressions", path)
    if isinstance(expr, (int, float)):
        return "const", _number(expr, path)
    if isinstance(expr, str):
        if expr not in allowed_vars:
            raise ConfigError(f"variable {expr!r} not available here (allowed: {', '.join(allowed_vars)})", path)
        return "var", expr
    if not isinstance(expr, dict) or len(expr) != 1:
        raise ConfigError("an expression node is a number, a variable name or a one-key object", path)
    (op, arg), = expr.items()
    sub = f"{path}.{op}"
    if op in ("add", "mul", "max", "min"):
        if not isinstance(arg, list) or not arg:
            raise ConfigError(f"{op!r} takes a nonempty list", sub)
        return op, [_node(a, f"{sub}[{k}]", allowed_vars) for k, a in enumerate(arg)]
    if op == "sub":
        if not isinstance(arg, list) or len(arg) != 2:
            raise ConfigError("'sub' takes exactly two operands", sub)
        return op, [_node(a, f"{sub}[{k}]", allowed_vars) for k, a in enumerate(arg)]
    if op in ("pos", "neg"):
        return op, _node(arg, sub, allowed_vars)
    if op == "poly":
        if not isinstance(arg, list) or not arg:
            raise ConfigError("'poly' takes a nonempty list of [coef, powers] terms", sub)
        terms = []
        for k, term in enumerate(arg):
            tp = f"{sub}[{k}]"
            if not isinstance(term, list) or len(term) != 2 or not isinstance(term[1], dict):
                raise ConfigError("a term is [coef, {variable: power}]", tp)
            coef = _number(term[0], f"{tp}[0]")
            powers = {}
            for v, k_ in term[1].items():
                if v not in allowed_vars:
                    raise ConfigError(f"variable {v!r} not available here (allowed: {', '.join(allowed_vars)})",
                                      f"{tp}[1].{v}")
                powers[v] = _number(k_, f"{tp}[1].{v}", integer=True, minimum=0)
            terms.append((coef, powers))
        return op, terms
    if op == "table":
        _check_keys(arg, {"var", "knots", "values"}, sub)
        var = arg.get("var")
        if var not in allowed_vars:
            raise ConfigError(f"table variable {var!r} not available here", f"{sub}.var")
        knots = np.asarray([_number(v, f"{sub}.knots[{k}]") for k, v in enumerate(arg.get("knots", []))])
        values = np.asarray([_number(v, f"{sub}.values[{k}]") for k, v in enumerate(arg.get("values", []))])
        if knots.size < 2 or knots.size != values.size:
            raise ConfigError("a table needs at least two knots and one value per knot", sub)
        if np.any(np.diff(knots) <= 0):
            raise ConfigError("table knots must be strictly increasing", f"{sub}.knots")
        return op, (var, knots, values)
    raise ConfigError(f"unknown expression node {op!r}", sub)


def _evaluate(node, env):
    kind, a = node
    if kind == "const":
        return a
    if kind == "var":
        return env[a]
    if kind == "add":
        return sum((_evaluate(c, env) for c in a[1:]), _evaluate(a[0], env))
    if kind == "sub":
        return _evaluate(a[0], env) - _evaluate(a[1], env)
    if kind == "mul":
        out = _evaluate(a[0], env)
        for c in a[1:]:
            out = out * _evaluate(c, env)
        return out
    if kind in ("max", "min"):
        red = np.maximum if kind == "max" else np.minimum
        out = _evaluate(a[0], env)
        for c in a[1:]:
            out = red(out, _evaluate(c, env))
        return out
    if kind == "pos":
        return np.maximum(_evaluate(a, env), 0.0)
    if kind == "neg":
        return np.maximum(-_evaluate(a, env), 0.0)
    if kind == "poly":
        total = 0.0
        for coef, powers in a:
            term = coef
            for v, k in powers.items():
                term = term * np.asarray(env[v], dtype=float) ** k
            total = total + term
        return total
    var, knots, values = a
    return np.interp(env[var], knots, values)


def compile_expr(expr, allowed_vars=VARIABLES, path="expr"):
    """Validate an expression tree and return ``(fn, node)`` with ``fn(env) -> array``."""
    node = _node(expr, path, allowed_vars)
    return (lambda env: _evaluate(node, env)), node


# -- interval analysis --------------------------------------------------------------------
# Each node maps to (lo, hi, dlo, dhi): a range for the value and for its
# partial derivative in one chosen variable, valid on the whole box.


def _imul(a, b):
    p = (a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1])
    return min(p), max(p)


def _iadd(a, b):
    return a[0] + b[0], a[1] + b[1]


def _ipow(iv, k):
    lo, hi = iv
    if k == 0:
        return 1.0, 1.0
    cands = [lo**k, hi**k]
    if k % 2 == 0 and lo < 0 < hi:
        cands.append(0.0)
    return min(cands), max(cands)


def _interval(node, box, var):
    kind, a = node
    if kind == "const":
        return a, a, 0.0, 0.0
    if kind == "var":
        lo, hi = box[a]
        d = 1.0 if a == var else 0.0
        return lo, hi, d, d
    if kind in ("add", "sub"):
        parts = [_interval(c, box, var) for c in a]
        if kind == "sub":
            lo, hi, dlo, dhi = parts[1]
            parts[1] = (-hi, -lo, -dhi, -dlo)
        v, d = (parts[0][0], parts[0][1]), (parts[0][2], parts[0][3])
        for p in parts[1:]:
            v, d = _iadd(v, p[:2]), _iadd(d, p[2:])
        return v[0], v[1], d[0], d[1]
    if kind == "mul":
        v = _interval(a[0], box, var)
        for c in a[1:]:
            w = _interval(c, box, var)
            val = _imul(v[:2], w[:2])
            der = _iadd(_imul(v[2:], w[:2]), _imul(v[:2], w[2:]))
            v = (val[0], val[1], der[0], der[1])
        return v
    if kind in ("max", "min"):
        parts = [_interval(c, box, var) for c in a]
        if kind == "max":
            lo, hi = max(p[0] for p in parts), max(p[1] for p in parts)
            live = [p for p in parts if p[1] >= lo]  # operands that can be the active one
        else:
            lo, hi = min(p[0] for p in parts), min(p[1] for p in parts)
            live = [p for p in parts if p[0] <= hi]
        return lo, hi, min(p[2] for p in live), max(p[3] for p in live)
    if kind in ("pos", "neg"):
        lo, hi, dlo, dhi = _interval(a, box, var)
        if kind == "neg":
            lo, hi, dlo, dhi = -hi, -lo, -dhi, -dlo
        if lo >= 0:
            return lo, hi, dlo, dhi
        if hi <= 0:
            return 0.0, 0.0, 0.0, 0.0
        return 0.0, hi, min(dlo, 0.0), max(dhi, 0.0)
    if kind == "poly":
        v, d = (0.0, 0.0), (0.0, 0.0)
        for coef, powers in a:
            tv, td = (coef, coef), (0.0, 0.0)
            for name, k in powers.items():
                pv = _ipow(box[name], k)
                if name == var and k > 0:
                    pd = _imul((k, k), _ipow(box[name], k - 1))
                else:
                    pd = (0.0, 0.0)
                td = _iadd(_imul(td, pv), _imul(tv, pd))
                tv = _imul(tv, pv)
            v, d = _iadd(v, tv), _iadd(d, td)
        return v[0], v[1], d[0], d[1]
    name, knots, values = a
    iv = box[name]
    inside = (values[(knots >= iv[0]) & (knots <= iv[1])]).tolist()
    ends = np.interp(list(iv), knots, values).tolist()
    lo, hi = min(inside + ends), max(inside + ends)
    if name != var:
        return lo, hi, 0.0, 0.0
    slopes = np.diff(values) / np.diff(knots)
    # flat extrapolation outside the knots contributes slope 0
    return lo, hi, min(float(slopes.min()), 0.0), max(float(slopes.max()), 0.0)


@dataclass
class Analysis:
    lipschitz: dict
    nondecreasing: dict
    nonincreasing: dict


def analyse(node, box, variables):
    """Interval bounds on the partial derivatives of ``node`` over ``box``.

    Returns for each variable the Lipschitz bound ``max(|dlo|, |dhi|)`` and
    whether the derivative range certifies monotonicity.  The bounds are
    conservative: a kink may report a derivative range wider than the truth.
    """
    lip, inc, dec = {}, {}, {}
    for v in variables:
        _, _, dlo, dhi = _interval(node, box, v)
        lip[v] = max(abs(dlo), abs(dhi))
        inc[v] = dlo >= 0.0
        dec[v] = dhi <= 0.0
    return Analysis(lip, inc, dec)


# -- run configuration --------------------------------------------------------------------


@dataclass
class RunConfig:
    problem: ProblemSpec
    scheme: str = "snell"
    engine: str = "lattice"
    paths: int = 10_000
    degree: int = 3
    ridge: float = 1e-8
    threads: int = 1
    seed: int = 0
    out: str = "out"
    plotdata: bool = True
    force: bool = False
    tolerances: dict = field(default_factory=lambda: dict(DEFAULTS["tolerances"]))
    scheme_options: dict = field(default_factory=dict)
    coefficient_analysis: dict = field(default_factory=dict)


def _grid(doc):
    g = doc.get("grid", {})
    _check_keys(g, _KEYS["grid"], "grid")
    horizon = _number(g.get("horizon", 1.0), "grid.horizon", positive=True)
    steps = _number(g.get("steps", 100), "grid.steps", integer=True, minimum=1)
    return TimeGrid(horizon, steps)


def _forward(doc, default):
    if "forward" not in doc:
        return default
    f = doc["forward"]
    _check_keys(f, _KEYS["forward"], "forward")
    kind = f.get("kind", default.kind if default else "brownian")
    if kind not in ("brownian", "arithmetic_bm", "geometric_bm"):
        raise ConfigError(f"unknown forward kind {kind!r}", "forward.kind")
    kw = {k: _number(f[k], f"forward.{k}") for k in ("x0", "drift", "vol") if k in f}
    try:
        return ForwardModel(kind, **kw)
    except ValueError as exc:
        raise ConfigError(str(exc), "forward") from exc


def _state_box(forward, grid, width):
    """Range of the forward state used by interval analysis: ``width`` standard deviations of ``B_T``."""
    b = width * math.sqrt(grid.horizon)
    ends = forward.state(np.array([0.0, grid.horizon, grid.horizon]), np.array([0.0, -b, b]))
    return float(np.min(ends)), float(np.max(ends))


def _declared(spec, key, path):
    if key in spec:
        return _number(spec[key], f"{path}.{key}", minimum=0.0)
    return None


def _custom_problem(prob, grid, forward, p):
    box_width = _number(prob.get("box", 5.0), "problem.box", positive=True)
    box = {"t": (0.0, grid.horizon), "x": _state_box(forward, grid, box_width)}
    for v in ("y", "z", "m"):
        box[v] = (-box_width, box_width)
    report = {"box": {k: list(v) for k, v in box.items()}}

    if "terminal" not in prob:
        raise ConfigError("missing terminal section", "problem.terminal")
    if "driver" not in prob:
        raise ConfigError("missing driver section", "problem.driver")

    drv = prob["driver"]
    _check_keys(drv, {"expr", "lip_y", "lip_z", "lip_m"}, "problem.driver")
    if "expr" not in drv:
        raise ConfigError("missing expression", "problem.driver.expr")
    f_fn, f_node = compile_expr(drv["expr"], VARIABLES, "problem.driver.expr")
    fa = analyse(f_node, box, ("y", "z", "m"))
    lips = {v: _declared(drv, f"lip_{v}", "problem.driver") for v in ("y", "z", "m")}
    report["driver"] = {"derived_lipschitz": fa.lipschitz,
                        "declared": {k: v for k, v in lips.items() if v is not None}}
    lips = {v: fa.lipschitz[v] if lips[v] is None else lips[v] for v in lips}

    def f(t, x, y, z, law):
        return f_fn({"t": t, "x": x, "y": y, "z": z, "m": law.mean})

    driver = DriverSpec(f, lip_y=lips["y"], lip_z=lips["z"], lip_m=lips["m"],
                        monotone_in_m=fa.nondecreasing["m"], monotone_in_y=fa.nondecreasing["y"])

    obs_doc = prob.get("obstacle")
    if obs_doc is None:
        obstacle = ObstacleSpec.none()
    else:
        _check_keys(obs_doc, {"expr", "gamma1", "gamma2"}, "problem.obstacle")
        if "expr" not in obs_doc:
            raise ConfigError("missing expression", "problem.obstacle.expr")
        h_fn, h_node = compile_expr(obs_doc["expr"], ("t", "x", "y", "m"), "problem.obstacle.expr")
        ha = analyse(h_node, box, ("x", "y", "m"))
        g1 = _declared(obs_doc, "gamma1", "problem.obstacle")
        g2 = _declared(obs_doc, "gamma2", "problem.obstacle")
        report["obstacle"] = {"derived_lipschitz": ha.lipschitz,
                              "declared": {k: v for k, v in (("gamma1", g1), ("gamma2", g2)) if v is not None}}
        g1 = ha.lipschitz["y"] if g1 is None else g1
        g2 = ha.lipschitz["m"] if g2 is None else g2

        def h(t, x, y, law):
            return np.broadcast_to(h_fn({"t": t, "x": x, "y": y, "m": law.mean}), np.shape(y)).astype(float)

        uses_x = ha.lipschitz["x"] > 0.0
        obstacle = ObstacleSpec(h, gamma1=g1, gamma2=g2, monotone_in_y=ha.nondecreasing["y"],
                                monotone_in_m=ha.nondecreasing["m"], state_dependent=uses_x)

    term = prob["terminal"]
    _check_keys(term, {"expr"}, "problem.terminal")
    if "expr" not in term:
        raise ConfigError("missing expression", "problem.terminal.expr")
    xi_fn, _ = compile_expr(term["expr"], ("x",), "problem.terminal.expr")
    terminal = TerminalSpec(lambda x: np.broadcast_to(xi_fn({"x": x}), np.shape(x)).astype(float))
    name = prob.get("name", "custom")
    if not isinstance(name, str):
        raise ConfigError("expected a string", "problem.name")
    return ProblemSpec(grid, forward, driver, obstacle, terminal, p_exponent=p, name=name), report


def _builtin_problem(kind, prob, grid, forward, p):
    params = prob.get("params", {})
    _check_keys(params, _PARAMS[kind], "problem.params")
    kw = {k: _number(v, f"problem.params.{k}") for k, v in params.items()}
    for extra in ("driver", "obstacle", "terminal"):
        if extra in prob:
            raise ConfigError(f"{extra!r} is only read for custom problems", f"problem.{extra}")
    if kind == "insurance":
        cost = kw.pop("cost", 0.01)
        return insurance_problem(grid=grid, forward=forward, p=p,
                                 c=lambda y: cost * np.asarray(y, dtype=float), c_lipschitz=abs(cost), **kw)
    if kind == "american_put":
        if forward is not None:
            raise ConfigError("the american_put forward model is set by problem.params (vol, rate, x0)", "forward")
        return american_put_problem(horizon=grid.horizon, steps=grid.steps, **kw)
    return linear_mf_problem(grid=grid, forward=forward, p=p, **kw)


def parse_config(doc, **overrides) -> RunConfig:
    """Build a :class:`RunConfig` from a parsed JSON document and command-line overrides."""
    _check_keys(doc, _SECTIONS, "")
    if "problem" not in doc:
        raise ConfigError("missing problem section", "problem")
    prob = doc["problem"]
    _check_keys(prob, _KEYS["problem"], "problem")
    kind = prob.get("type")
    if kind not in _PARAMS:
        raise ConfigError(f"unknown problem type {kind!r} (expected one of {', '.join(_PARAMS)})", "problem.type")
    grid = _grid(doc)
    p = _number(prob.get("p", 2.0), "problem.p", minimum=1.0)
    report = {}
    try:
        if kind == "custom":
            forward = _forward(doc, ForwardModel("brownian"))
            problem, report = _custom_problem(prob, grid, forward, p)
        else:
            forward = _forward(doc, None)
            problem = _builtin_problem(kind, prob, grid, forward, p)
    except ValueError as exc:
        # model-level rejections (e.g. gamma1 >= 1) are validation failures, not config errors
        raise ProblemError(str(exc)) from exc

    sch = doc.get("scheme", {})
    _check_keys(sch, _KEYS["scheme"], "scheme")
    opts = {}
    for key in ("auto_theta", "auto_kappa", "windowing"):
        if key in sch:
            if not isinstance(sch[key], bool):
                raise ConfigError("expected true or false", f"scheme.{key}")
            opts[key] = sch[key]
    for key in ("kappa", "theta", "safety", "implicit_weight"):
        if key in sch:
            opts[key] = _number(sch[key], f"scheme.{key}")
    if "max_outer" in sch:
        opts["max_outer"] = _number(sch["max_outer"], "scheme.max_outer", integer=True, minimum=1)
    if "metric" in sch:
        if sch["metric"] not in ("mean_only", "wasserstein"):
            raise ConfigError("metric must be 'mean_only' or 'wasserstein'", "scheme.metric")
        opts["metric"] = sch["metric"]
    if "schedule" in sch:
        s = sch["schedule"]
        if not isinstance(s, list) or not s:
            raise ConfigError("expected a nonempty list of penalty levels", "scheme.schedule")
        opts["schedule"] = tuple(_number(v, f"scheme.schedule[{k}]", positive=True) for k, v in enumerate(s))
        if any(b <= a for a, b in zip(opts["schedule"], opts["schedule"][1:])):
            raise ConfigError("penalty levels must increase", "scheme.schedule")
    else:
        opts["schedule"] = DEFAULT_SCHEDULE
    scheme = overrides.get("scheme") or sch.get("name", "snell")
    if scheme not in ("snell", "penalty", "both"):
        raise ConfigError(f"unknown scheme {scheme!r}", "scheme.name")

    eng = doc.get("engine", {})
    _check_keys(eng, _KEYS["engine"], "engine")
    e = dict(DEFAULTS["engine"])
    if "kind" in eng:
        e["kind"] = eng["kind"]
    for key in ("paths", "degree", "threads"):
        if key in eng:
            e[key] = _number(eng[key], f"engine.{key}", integer=True, minimum=0 if key == "degree" else 1)
    if "ridge" in eng:
        e["ridge"] = _number(eng["ridge"], "engine.ridge", minimum=0.0)
    for key in ("engine", "paths", "threads"):
        if overrides.get(key) is not None:
            e["kind" if key == "engine" else key] = overrides[key]
    if e["kind"] not in ("mc", "lattice"):
        raise ConfigError(f"unknown engine {e['kind']!r}", "engine.kind")

    tol_doc = doc.get("tolerances", {})
    _check_keys(tol_doc, _KEYS["tolerances"], "tolerances")
    tols = dict(DEFAULTS["tolerances"])
    tols.update({k: _number(v, f"tolerances.{k}", positive=True) for k, v in tol_doc.items()})

    out_doc = doc.get("output", {})
    _check_keys(out_doc, _KEYS["output"], "output")
    out = overrides.get("out") or out_doc.get("dir", DEFAULTS["output"]["dir"])
    if not isinstance(out, str):
        raise ConfigError("expected a path string", "output.dir")
    plotdata = out_doc.get("plotdata", True)
    if not isinstance(plotdata, bool):
        raise ConfigError("expected true or false", "output.plotdata")

    seed = overrides.get("seed")
    if seed is None:
        seed = _number(doc.get("seed", 0), "seed", integer=True, minimum=0)

    return RunConfig(problem=problem, scheme=scheme, engine=e["kind"], paths=e["paths"], degree=e["degree"],
                     ridge=e["ridge"], threads=e["threads"], seed=seed, out=out, plotdata=plotdata,
                     force=bool(overrides.get("force", False)), tolerances=tols, scheme_options=opts,
                     coefficient_analysis=report)


def load_config(path, **overrides) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", "--config") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}", "--config") from exc
    return parse_config(doc, **overrides)
