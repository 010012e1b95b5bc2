"""Desk-scale simulator and optimizer for ground-to-satellite federated
training with inter-satellite handoff."""

from .scenario import (
    Scenario,
    ScenarioError,
    load_scenario,
    validate_scenario,
    load_coverage_schedule,
    synthetic_dataset,
    partition_dataset,
    attach_datasets,
    apply_offload,
    prepare_data,
)
from .cost import (
    CostBreakdown,
    ModelFootprint,
    round_latency,
    cluster_costs,
)
from .optimizer import (
    DecisionVector,
    FeasibilityReport,
    InfeasibleError,
    OptimizeResult,
    bisect,
    check_feasibility,
    optimize,
    optimize_pinned_alpha,
    solve_alpha,
    solve_bandwidth,
    solve_freq,
)
from .fl import (
    ModelLayout,
    ModelParams,
    TrainConfig,
    evaluate,
    global_aggregate,
    init_model,
    intra_cluster_aggregate,
    local_update,
)
from .sim import SimResult, run_experiment
from .analysis import (
    BoundInputs,
    convergence_bound,
    estimate_smoothness_and_rho,
    omega,
    sample_variance,
    verify_bound_empirically,
)

__version__ = "0.1.0"

__all__ = [
    "Scenario", "ScenarioError", "load_scenario", "validate_scenario",
    "load_coverage_schedule", "synthetic_dataset", "partition_dataset",
    "attach_datasets", "apply_offload", "prepare_data",
    "CostBreakdown", "ModelFootprint", "round_latency", "cluster_costs",
    "DecisionVector", "FeasibilityReport", "InfeasibleError", "OptimizeResult",
    "bisect", "check_feasibility", "optimize", "optimize_pinned_alpha",
    "solve_alpha", "solve_bandwidth", "solve_freq",
    "ModelLayout", "ModelParams", "TrainConfig", "evaluate",
    "global_aggregate", "init_model", "intra_cluster_aggregate", "local_update",
    "SimResult", "run_experiment",
    "BoundInputs", "convergence_bound", "estimate_smoothness_and_rho",
    "omega", "sample_variance", "verify_bound_empirically",
    "__version__",
]
