"""Per-exemplar maximal-margin local Mahalanobis metrics from negatives only.

Learns, around a single query datum, the minimal-norm PSD matrix that
keeps every negative example at a fixed squared distance, by reduction to
a fixed-bias quadratic-kernel SVM dual. Optionally makes the metric
invariant to declared transformations by solving on the orthogonal
complement of their tangent directions.
"""

from ._accel import BACKEND
from .errors import (
    AngleTooLarge,
    BadMagic,
    BlankImage,
    DimensionLimit,
    DimensionMismatch,
    Infeasible,
    InsufficientFolds,
    IterationLimit,
    LocalMahalError,
    ParseError,
    ScaleExceeded,
    ShiftTooLarge,
    TruncatedFile,
)
from .invariance import build_invariant_metric, build_tangent_set, project_complement
from .metric import (
    build_local_metric,
    load_metric,
    mahal_distance_sq,
    mahal_distance_sq_many,
    materialize,
    metric_rank,
    save_metric,
)
from .model import (
    DualSolution,
    EvalReport,
    ExemplarProblem,
    LocalMetric,
    TangentSet,
    validate_problem,
)
from .solver import SolverConfig, dual_objective, oracle_solve, quadratic_kernel, solve_dual

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "AngleTooLarge",
    "BadMagic",
    "BlankImage",
    "DimensionLimit",
    "DimensionMismatch",
    "DualSolution",
    "EvalReport",
    "ExemplarProblem",
    "Infeasible",
    "InsufficientFolds",
    "IterationLimit",
    "LocalMahalError",
    "LocalMetric",
    "ParseError",
    "ScaleExceeded",
    "ShiftTooLarge",
    "SolverConfig",
    "TangentSet",
    "TruncatedFile",
    "build_invariant_metric",
    "build_local_metric",
    "build_tangent_set",
    "dual_objective",
    "load_metric",
    "mahal_distance_sq",
    "mahal_distance_sq_many",
    "materialize",
    "metric_rank",
    "oracle_solve",
    "project_complement",
    "quadratic_kernel",
    "save_metric",
    "solve_dual",
    "validate_problem",
]
