"""Autonomy-aware clustering.

Entities assigned to a cluster may override the prescription according to a
conditional kernel p(k|j,i).  This package provides the annealed solver for
the resulting expected-distortion problem, eigenvalue-based phase analysis of
its free energy, two model-free learners (tabular and attention-based) for
unknown kernels, and a benchmark harness comparing them.
"""

from .core import (
    AssignmentPolicy,
    AutonomyModel,
    ClusterSet,
    Dataset,
    avg_distance_matrix,
    harden,
    objective_D,
    read_dataset_csv,
    sqdist_matrix,
    squared_distance,
    write_dataset_csv,
)
from .autonomy import (
    IdentityAutonomy,
    ParametricAutonomy,
    TabularAutonomy,
    full_tensor,
    parametric_prob,
    read_tabular_csv,
    sample_override,
    write_tabular_csv,
)
from .solver import (
    AnnealConfig,
    AnnealTrace,
    ArmijoParams,
    DegenerateClusterError,
    NonConvergenceError,
    SolverState,
    anneal,
    armijo_descent,
    centroid_update,
    cluster_masses,
    free_energy,
    gibbs_policy,
    grad_free_energy,
    inner_fixed_point,
)
from .phase import (
    HessianBundle,
    TransitionEvent,
    assemble_hessian,
    critical_beta,
    detect_transitions,
    distinct_center_count,
    hessian_quadratic_form,
    normalized_lambda_max,
    normalized_min_eig,
    sensitivity_bound,
)
from .rl import (
    QTable,
    RlConfig,
    StepSchedule,
    learn_tabular,
    policy_from_q,
    q_update,
    sgd_center_step,
)
from .aden import (
    AdenConfig,
    AdenTrainer,
    TrainConfig,
    aden_forward,
    deep_anneal,
    init_params,
)
from .scenarios import (
    BenchmarkConfigs,
    GapReport,
    MinMaxTransform,
    Scenario,
    four_blob_dataset,
    grid16_dataset,
    honor_with_uniform_override,
    load_geocsv,
    make_blobs,
    parametric_scenario,
    run_benchmark,
)

__version__ = "0.1.0"

__all__ = [
    "AssignmentPolicy", "AutonomyModel", "ClusterSet", "Dataset",
    "avg_distance_matrix", "harden", "objective_D", "read_dataset_csv",
    "sqdist_matrix", "squared_distance", "write_dataset_csv",
    "IdentityAutonomy", "ParametricAutonomy", "TabularAutonomy",
    "full_tensor", "parametric_prob", "read_tabular_csv", "sample_override",
    "write_tabular_csv",
    "AnnealConfig", "AnnealTrace", "ArmijoParams", "DegenerateClusterError",
    "NonConvergenceError", "SolverState", "anneal", "armijo_descent",
    "centroid_update", "cluster_masses", "free_energy", "gibbs_policy",
    "grad_free_energy", "inner_fixed_point",
    "HessianBundle", "TransitionEvent", "assemble_hessian", "critical_beta",
    "detect_transitions", "distinct_center_count", "hessian_quadratic_form",
    "normalized_lambda_max", "normalized_min_eig", "sensitivity_bound",
    "QTable", "RlConfig", "StepSchedule", "learn_tabular", "policy_from_q",
    "q_update", "sgd_center_step",
    "AdenConfig", "AdenTrainer", "TrainConfig", "aden_forward", "deep_anneal",
    "init_params",
    "BenchmarkConfigs", "GapReport", "MinMaxTransform", "Scenario",
    "four_blob_dataset", "grid16_dataset", "honor_with_uniform_override",
    "load_geocsv", "make_blobs", "parametric_scenario", "run_benchmark",
    "__version__",
]
