from survfix.gp.expr import (
    ExprTree,
    Node,
    eval_expr,
    evaluate,
    expr_mse,
    format_expr,
    parse_expr,
    simplify,
)
from survfix.gp.gomea import (
    DistillReport,
    DistillResult,
    FitnessProblem,
    GpConfig,
    Individual,
    distill_feature,
    gom_generation,
    run_ims,
)

__all__ = [
    "DistillReport",
    "DistillResult",
    "ExprTree",
    "FitnessProblem",
    "GpConfig",
    "Individual",
    "Node",
    "distill_feature",
    "eval_expr",
    "evaluate",
    "expr_mse",
    "format_expr",
    "gom_generation",
    "parse_expr",
    "run_ims",
    "simplify",
]
