"""Duality-based solver for bilevel programs with convex lower levels."""

from .dbp import (
    ConstraintResiduals,
    DbpPoint,
    FeasibilityTolerance,
    NoFeasiblePointError,
    SolverOptions,
    residuals,
    solve_dbp,
)
from .driver import DriverConfig, DriverError, SolveReport, run
from .dual import DualEval, eval_rdf, maximize_dual
from .inner import InnerSolution, solve_lower, solve_regularized_lagrangian
from .oracles import (
    MINUS_INFINITY,
    GridSpec,
    finite_diff_grad,
    grid_minimize,
    is_minus_infinity,
    lp_ldf_closed_form,
)
from .problem import (
    BilevelProblem,
    BlockStructure,
    BoxSet,
    ProblemError,
    SmoothScalarFn,
    SmoothVectorFn,
    ValidationReport,
    constant_zero_constraints,
    validate_problem,
)

__all__ = [
    "BilevelProblem",
    "BlockStructure",
    "BoxSet",
    "ConstraintResiduals",
    "DbpPoint",
    "DriverConfig",
    "DriverError",
    "DualEval",
    "FeasibilityTolerance",
    "GridSpec",
    "InnerSolution",
    "MINUS_INFINITY",
    "NoFeasiblePointError",
    "ProblemError",
    "SmoothScalarFn",
    "SmoothVectorFn",
    "SolveReport",
    "SolverOptions",
    "ValidationReport",
    "constant_zero_constraints",
    "eval_rdf",
    "finite_diff_grad",
    "grid_minimize",
    "is_minus_infinity",
    "lp_ldf_closed_form",
    "maximize_dual",
    "residuals",
    "run",
    "solve_dbp",
    "solve_lower",
    "solve_regularized_lagrangian",
    "validate_problem",
]

__version__ = "0.1.0"
