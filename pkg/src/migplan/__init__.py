"""MIG-aware inference deployment: partition rules, optimizers, transition planning and simulation."""

__version__ = "0.1.0"

from .model import (  # noqa: E402
    EPS, SIZES, Assignment, ConfigurationError, Deployment, GpuConfig, ModelProfile, Placement, ServiceSpec,
    Workload, is_satisfied, slack, utility_of,
)
from .rules import (  # noqa: E402
    DEFAULT_RULES, ConfigSpace, PartitionRuleSet, enumerate_configs, enumerate_maximal_partitions,
    is_legal_partition, rule_reconf,
)
from .greedy import PlanningError, fast_algo, score  # noqa: E402
from .mcts import mcts_solve  # noqa: E402
from .ga import GaParams, two_phase  # noqa: E402
from .cluster import ActionCostModel, ClusterState, Guard, apply_action, run_plan  # noqa: E402
from .transition import compute_deltas, pair_exchanges, plan_transition  # noqa: E402

__all__ = [
    "EPS", "SIZES", "Assignment", "ConfigurationError", "Deployment", "GpuConfig", "ModelProfile", "Placement",
    "ServiceSpec", "Workload", "is_satisfied", "slack", "utility_of",
    "DEFAULT_RULES", "ConfigSpace", "PartitionRuleSet", "enumerate_configs", "enumerate_maximal_partitions",
    "is_legal_partition", "rule_reconf",
    "PlanningError", "fast_algo", "score", "mcts_solve", "GaParams", "two_phase",
    "ActionCostModel", "ClusterState", "Guard", "apply_action", "run_plan",
    "compute_deltas", "pair_exchanges", "plan_transition",
]
