"""famscale: scaling-law estimation and compute planning for multi-exit model families.

A family trains one backbone with G usable exits, yielding G deployable
sub-models from a single run. This package fits the granularity-extended
loss law L(N, D, G) = (E + A/N**alpha + B/D**beta) * G**gamma and the
branch-level penalty law L(P, Q, D) = L_dense + (alpha_b*P + beta_b*Q) *
(d_d/D)**a_exp from run records, and derives IsoFLOP experiment plans,
compute-efficient frontiers, isoloss contours, and Efficiency Leverage
curves from the fitted laws.
"""

__version__ = "0.1.0"

from .analysis import (
    ELPoint,
    FrontierPoint,
    PlanRow,
    compute_frontier,
    efficiency_leverage,
    el_curve,
    isoloss_contour,
    loss_surface,
    plan_isoflop_group,
)
from .branch import (
    BranchParams,
    fit_branch,
    predict_branch_loss,
    upstream_negligibility,
)
from .familial import (
    FamilialParams,
    fit,
    invert_for_tokens,
    objective,
    objective_gradient,
    predict_log_loss,
    predict_loss,
)
from .fitting import BranchFitConfig, FitConfig, FitError, FitReport, StartResult
from .flops import (
    ArchConfig,
    ComputeBudget,
    approx_params,
    branch_sizes,
    flops_per_token,
    tokens_for_budget,
)
from .numerics import (
    MinimizeResult,
    OptimizerOptions,
    finite_diff_gradient,
    huber,
    huber_derivative,
    log_sum_exp,
    minimize,
)
from .records import (
    BranchRecord,
    ExitLossVector,
    RunRecord,
    ValidationError,
    aggregate_exit_losses,
    load_branches,
    load_runs,
    save_branches,
    save_runs,
    synth_branches,
    synth_runs,
)

__all__ = [
    "__version__",
    "ArchConfig",
    "BranchFitConfig",
    "BranchParams",
    "BranchRecord",
    "ComputeBudget",
    "ELPoint",
    "ExitLossVector",
    "FamilialParams",
    "FitConfig",
    "FitError",
    "FitReport",
    "FrontierPoint",
    "MinimizeResult",
    "OptimizerOptions",
    "PlanRow",
    "RunRecord",
    "StartResult",
    "ValidationError",
    "aggregate_exit_losses",
    "approx_params",
    "branch_sizes",
    "compute_frontier",
    "efficiency_leverage",
    "el_curve",
    "finite_diff_gradient",
    "fit",
    "fit_branch",
    "flops_per_token",
    "huber",
    "huber_derivative",
    "invert_for_tokens",
    "isoloss_contour",
    "load_branches",
    "load_runs",
    "log_sum_exp",
    "loss_surface",
    "minimize",
    "objective",
    "objective_gradient",
    "plan_isoflop_group",
    "predict_branch_loss",
    "predict_log_loss",
    "predict_loss",
    "save_branches",
    "save_runs",
    "synth_branches",
    "synth_runs",
    "tokens_for_budget",
    "upstream_negligibility",
]
