"""Finite-volume simulator and verification harness for a degenerate
chemotaxis-consumption system with nutrient-dependent motility."""

from .diagnostics import (
    BoundCheck,
    DecayDiagnostic,
    LimitRecord,
    NotConvergedError,
    check_conservation,
    check_elliptic_identity,
    check_limit_distance,
    check_load_bounds,
    decay_envelope,
    energy_residual,
    extract_limit,
    weak_form_residual,
)
from .elliptic import EllipticSolveError, PoissonSolution, h1_dual_norm, solve_neumann_poisson
from .grid import (
    Field,
    Grid,
    GridError,
    cosine_field,
    grad_sq_norm,
    integrate,
    laplacian_neumann,
    lp_norm,
    mean,
    neumann_mode,
    neumann_mode_eigenvalue,
    read_snapshot,
    write_snapshot,
)
from .motility import MotilityError, MotilitySpec
from .stepping import (
    DiagnosticSample,
    RunFailure,
    RunResult,
    SchemeParams,
    State,
    StepError,
    cfl_dt,
    run,
    step,
    step_u,
    step_v,
)

__version__ = "0.1.0"

__all__ = [
    "BoundCheck",
    "DecayDiagnostic",
    "DiagnosticSample",
    "EllipticSolveError",
    "Field",
    "Grid",
    "GridError",
    "LimitRecord",
    "MotilityError",
    "MotilitySpec",
    "NotConvergedError",
    "PoissonSolution",
    "RunFailure",
    "RunResult",
    "SchemeParams",
    "State",
    "StepError",
    "cfl_dt",
    "check_conservation",
    "check_elliptic_identity",
    "check_limit_distance",
    "check_load_bounds",
    "cosine_field",
    "decay_envelope",
    "energy_residual",
    "extract_limit",
    "grad_sq_norm",
    "h1_dual_norm",
    "integrate",
    "laplacian_neumann",
    "lp_norm",
    "mean",
    "neumann_mode",
    "neumann_mode_eigenvalue",
    "read_snapshot",
    "run",
    "solve_neumann_poisson",
    "step",
    "step_u",
    "step_v",
    "weak_form_residual",
    "write_snapshot",
]
