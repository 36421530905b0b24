"""Command line entry point: ``mfrbsde solve --config run.json``.

Exit codes: 0 success, 2 the problem fails validation (infeasible
contraction constants, coarse grid, bad coefficients), 3 an iteration did not
converge, 4 the configuration is malformed.  ``MFRBSDE_LOG`` sets the log
level (default ``WARNING``).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import __version__
from .analysis import feasibility_report
from .condexp import LatticeEngine, RegressionEngine
from .config import RunConfig, load_config
from .errors import (
    BoundViolation,
    ConfigError,
    ConvergenceError,
    DominationError,
    GridError,
    InfeasibleError,
    ProblemError,
)
from .model import simulate_paths
from .penalty import penalty_solve
from .report import report
from .snell import picard_solve

__all__ = ["main", "run", "solve_config"]

log = logging.getLogger("mfrbsde")

EXIT_OK, EXIT_INVALID, EXIT_NONCONVERGED, EXIT_CONFIG = 0, 2, 3, 4


def _setup_logging():
    level = os.environ.get("MFRBSDE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def _feasibility(cfg: RunConfig):
    p = cfg.problem
    safety = cfg.scheme_options.get("safety", 0.9)
    rep = feasibility_report(p.p_exponent, p.driver.c_f, p.obstacle.gamma1, p.obstacle.gamma2, safety)
    if not rep.feasible and not cfg.force:
        raise InfeasibleError(
            f"contraction condition fails: value {rep.gamma_condition_value:.6g} >= 1 for "
            f"gamma1 = {p.obstacle.gamma1:g}, gamma2 = {p.obstacle.gamma2:g}, p = {p.p_exponent:g}; "
            "no contraction window exists (rerun with --force to iterate with damping)"
        )
    return rep


def solve_config(cfg: RunConfig) -> dict:
    """Run the configured scheme(s); returns ``{scheme: bundle}``."""
    rep = _feasibility(cfg)
    problem = cfg.problem
    if cfg.engine == "lattice":
        engine, paths = LatticeEngine(problem.forward, problem.grid), None
    else:
        engine = RegressionEngine(degree=cfg.degree, ridge=cfg.ridge)
        paths = simulate_paths(problem.forward, problem.grid, cfg.paths, cfg.seed, threads=cfg.threads)
    opts = dict(cfg.scheme_options)
    picard_kw = {k: opts[k] for k in ("windowing", "safety", "metric", "max_outer") if k in opts}
    weight = opts.get("implicit_weight", 0.5)
    tols = cfg.tolerances
    out = {}
    if cfg.scheme in ("snell", "both"):
        log.info("snell scheme on %s engine", cfg.engine)
        out["snell"] = picard_solve(problem, engine, paths, tol=tols["picard"], force=cfg.force,
                                    implicit_weight=weight, root_tol=tols["root"], **picard_kw)
    if cfg.scheme in ("penalty", "both"):
        log.info("penalty scheme on %s engine", cfg.engine)
        pen_kw = {k: opts[k] for k in ("auto_theta", "auto_kappa", "kappa", "theta") if k in opts}
        out["penalty"] = penalty_solve(problem, engine, paths, schedule=opts["schedule"], tol=tols["penalty"],
                                       picard_tol=tols["picard"], implicit_weight=weight, force=cfg.force,
                                       **pen_kw, **picard_kw)
    for bundle in out.values():
        bundle.diagnostics.setdefault("feasibility", rep.as_dict())
    return out


def _write(cfg: RunConfig, bundles: dict):
    extra = {"problem": cfg.problem.name, "seed": cfg.seed, "paths": cfg.paths if cfg.engine == "mc" else None,
             "coefficient_analysis": cfg.coefficient_analysis}
    if len(bundles) == 2:
        gap = float(np.max(np.abs(bundles["snell"].mean_curve() - bundles["penalty"].mean_curve())))
        tol = cfg.tolerances["cross_scheme"]
        extra["cross_scheme"] = {"sup_mean_gap": gap, "tol": tol, "within_tol": gap <= tol}
        if gap > tol:
            log.warning("snell and penalty means differ by %.3e > %.1e", gap, tol)
    for name, bundle in bundles.items():
        report(bundle, os.path.join(cfg.out, name), cfg.problem, plotdata=cfg.plotdata,
               extra=dict(extra, scheme=name))


def run(config_path, scheme=None, engine=None, paths=None, seed=None, threads=None, out=None,
        force=False) -> int:
    """Load, solve and write; returns the process exit code."""
    try:
        cfg = load_config(config_path, scheme=scheme, engine=engine, paths=paths, seed=seed, threads=threads,
                          out=out, force=force)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ProblemError as exc:
        print(f"invalid problem: {exc}", file=sys.stderr)
        return EXIT_INVALID
    try:
        bundles = solve_config(cfg)
    except (InfeasibleError, GridError, BoundViolation, DominationError, ProblemError) as exc:
        print(f"validation failed: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ConvergenceError as exc:
        print(f"no convergence: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    try:
        _write(cfg, bundles)
    except OSError as exc:
        print(f"config error: output.dir: cannot write results ({exc.strerror})", file=sys.stderr)
        return EXIT_CONFIG
    for name, b in bundles.items():
        d = b.diagnostics
        print(f"{name}: Y0 = {b.mean_curve()[0]:.10g}, Picard passes {d.get('picard_iters')}, "
              f"skorohod residual {d.get('skorohod_residual', 0.0):.3e} -> {os.path.join(cfg.out, name)}")
    return EXIT_OK


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mfrbsde", description="Solve mean-field reflected BSDEs.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    s = sub.add_parser("solve", help="solve the problem described by a JSON config")
    s.add_argument("--config", required=True, metavar="PATH")
    s.add_argument("--scheme", choices=("snell", "penalty", "both"))
    s.add_argument("--engine", choices=("mc", "lattice"))
    s.add_argument("--paths", type=_positive_int, metavar="N")
    s.add_argument("--seed", type=int, metavar="N")
    s.add_argument("--threads", type=_positive_int, metavar="N")
    s.add_argument("--out", metavar="DIR")
    s.add_argument("--force", action="store_true", help="iterate even when no contraction window exists")
    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    return run(args.config, scheme=args.scheme, engine=args.engine, paths=args.paths, seed=args.seed,
               threads=args.threads, out=args.out, force=args.force)


if __name__ == "__main__":
    sys.exit(main())
