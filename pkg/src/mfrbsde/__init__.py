"""Numerical solvers for reflected backward SDEs with mean-field interaction."""

from .analysis import (
    FeasibilityReport,
    admissible_delta,
    contraction_lambda,
    feasibility_report,
    gamma_condition,
    kappa_transform,
    linearization_diagnostic,
    p1_lambda,
    theta_transform,
    transform_bundle,
    untransform,
)
from .condexp import LatticeEngine, RegressionEngine, discretize, estimate_z, fit_condexp
from .errors import (
    BoundViolation,
    ConfigError,
    ConvergenceError,
    DominationError,
    GridError,
    InfeasibleError,
    MFRBSDEError,
    ProblemError,
)
from .lawtools import LawCurve, curve_distance, law_of, wasserstein_p
from .model import (
    DominationSpec,
    DriverSpec,
    ForwardModel,
    LawView,
    ObstacleSpec,
    PathEnsemble,
    ProblemSpec,
    SolutionBundle,
    TerminalSpec,
    TimeGrid,
    ValidationReport,
    simulate_paths,
    validate,
)
from .penalty import base_solve, domination_check, penalized_pass, penalty_solve
from .problems import american_put_problem, insurance_domination, insurance_problem, linear_mf_problem, z_linear_problem
from .snell import backward_pass, constraint_violation, picard_solve, reflect_threshold, skorohod_residual

__version__ = "0.1.0"
