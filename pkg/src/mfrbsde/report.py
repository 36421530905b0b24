"""Result files for solved bundles.

``timeseries.csv`` holds one row per grid time, ``diagnostics.json`` the
solver diagnostics under a versioned schema and ``plotdata.csv`` the 5%,
50% and 95% quantiles of ``Y``.  Numbers are written with 17 significant
digits so identical runs give byte-identical files.
"""

from __future__ import annotations

import csv
import json
import math
import os

import numpy as np

from .model import ProblemSpec, SolutionBundle

__all__ = ["SCHEMA_VERSION", "timeseries", "weighted_quantile", "diagnostics_document", "report"]

SCHEMA_VERSION = 1
QUANTILES = (0.05, 0.5, 0.95)


def _fmt(v) -> str:
    return format(float(v), ".17g")


def _check_bundle(bundle: SolutionBundle):
    if not bundle.y or any(np.size(v) == 0 for v in bundle.y):
        raise ValueError("bundle has no paths or nodes to report")


def _violation_curve(bundle: SolutionBundle, problem: ProblemSpec | None):
    if problem is None or problem.obstacle.absent:
        return np.zeros(len(bundle.y))
    t = bundle.grid.times
    out = []
    for i, y in enumerate(bundle.y):
        h = np.asarray(problem.obstacle(t[i], bundle.states[i], y, bundle.law_curve[i]), dtype=float)
        out.append(max(float(np.max(h - y)), 0.0))
    return np.array(out)


def timeseries(bundle: SolutionBundle, problem: ProblemSpec | None = None) -> dict:
    """Columns ``t, mean_Y, std_Y, mean_K, mean_Z, constraint_violation``.

    ``mean_Z`` has no value at the horizon and repeats the last step there;
    ``constraint_violation`` is ``max (h - Y)^+`` over paths at each time.
    """
    _check_bundle(bundle)
    z = bundle.mean_z_curve()
    return {
        "t": bundle.grid.times,
        "mean_Y": bundle.mean_curve(),
        "std_Y": bundle.std_curve(),
        "mean_K": bundle.mean_k_curve(),
        "mean_Z": np.append(z, z[-1]) if z.size else np.zeros(1),
        "constraint_violation": _violation_curve(bundle, problem),
    }


def weighted_quantile(values, weights, q: float) -> float:
    """Inverse of the (weighted) empirical distribution function at ``q``."""
    v = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    order = np.argsort(v, kind="stable")
    cum = np.cumsum(w[order])
    k = int(np.searchsorted(cum, q * cum[-1] - 1e-12 * cum[-1], side="left"))
    return float(v[order][min(k, v.size - 1)])


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to ``null``."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    if obj is None or isinstance(obj, str):
        return obj
    return repr(obj)


def diagnostics_document(bundle: SolutionBundle, extra: dict | None = None) -> dict:
    """The diagnostics dictionary with the fields every consumer can rely on lifted to the top."""
    d = bundle.diagnostics
    levels = d.get("levels", [])
    doc = {
        "schema_version": SCHEMA_VERSION,
        "engine": bundle.kind,
        "gamma_condition": d.get("gamma_condition"),
        "delta_used": d.get("delta_used"),
        "picard_iters_per_window": d.get("picard_iters_per_window", []),
        "skorohod_residual": d.get("skorohod_residual"),
        "constraint_violation": d.get("constraint_violation"),
        "penalty_schedule": [
            {k: lv.get(k) for k in ("n", "monotonicity_defect", "constraint_defect", "skorohod_residual")}
            for lv in levels
        ],
        "solver": {k: v for k, v in d.items() if k != "levels"},
    }
    if extra:
        doc.update(extra)
    return _clean(doc)


def report(bundle: SolutionBundle, out_dir, problem: ProblemSpec | None = None, plotdata: bool = True,
           extra: dict | None = None) -> list:
    """Write the result files for ``bundle`` into ``out_dir`` and return their paths."""
    _check_bundle(bundle)
    os.makedirs(out_dir, exist_ok=True)
    written = []
    cols = timeseries(bundle, problem)
    path = os.path.join(out_dir, "timeseries.csv")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(cols))
        for row in zip(*cols.values()):
            w.writerow([_fmt(v) for v in row])
    written.append(path)

    path = os.path.join(out_dir, "diagnostics.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(diagnostics_document(bundle, extra), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
    written.append(path)

    if plotdata:
        path = os.path.join(out_dir, "plotdata.csv")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "q05_Y", "q50_Y", "q95_Y"])
            for t, y, wt in zip(bundle.grid.times, bundle.y, bundle.weights):
                w.writerow([_fmt(t)] + [_fmt(weighted_quantile(y, wt, q)) for q in QUANTILES])
        written.append(path)
    return written
