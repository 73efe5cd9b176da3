"""Reward machines for cooperative multi-agent reinforcement learning.

Task-level decomposition: project a team reward machine onto per-agent
event sets, compose the projections back, and certify the decomposition by
bisimilarity. Execution-level decomposition: factor the team labeling
function into local ones that synchronize on shared events. Training:
decentralized q-learning where each agent trains alone against its
projected machine, plus centralized and flat baselines for comparison.
"""

from .machine import RewardMachine, RMSyntaxError, parse_rm, serialize_rm
from .algebra import (
    BisimWitness,
    DecompositionReport,
    Partition,
    ProjectedRM,
    ProjectionError,
    check_decomposition,
    compose_many,
    is_bisimilar,
    local_equivalence,
    parallel_compose,
    project,
)
from .labeling import (
    CollaboratorIndex,
    DomainTooLargeError,
    LabeledTrajectory,
    LabelingReport,
    LabelingRule,
    LocalLabeling,
    Requirement,
    TeamLabeling,
    check_label_decomposability,
    check_projection_consistency,
    local_labeled_trajectories,
    local_labelings,
    synchronize,
    team_labeled_trajectory,
    verify_labeling_factored,
)
from .environments import (
    ConfigError,
    DomainBundle,
    GridWorldDomain,
    IndividualGridEnv,
    NavigateOption,
    Region,
    TeamGridEnv,
    build_rendezvous_machine,
    events_occurred,
    make_domain,
    shipped_domains,
    step_agent,
    step_team,
)

__version__ = "0.1.0"

__all__ = [
    "RewardMachine",
    "RMSyntaxError",
    "parse_rm",
    "serialize_rm",
    "Partition",
    "ProjectedRM",
    "ProjectionError",
    "BisimWitness",
    "DecompositionReport",
    "local_equivalence",
    "project",
    "parallel_compose",
    "compose_many",
    "is_bisimilar",
    "check_decomposition",
    "Requirement",
    "LabelingRule",
    "CollaboratorIndex",
    "TeamLabeling",
    "LocalLabeling",
    "LabeledTrajectory",
    "LabelingReport",
    "DomainTooLargeError",
    "local_labelings",
    "synchronize",
    "team_labeled_trajectory",
    "local_labeled_trajectories",
    "check_projection_consistency",
    "check_label_decomposability",
    "verify_labeling_factored",
    "ConfigError",
    "DomainBundle",
    "GridWorldDomain",
    "IndividualGridEnv",
    "NavigateOption",
    "Region",
    "TeamGridEnv",
    "build_rendezvous_machine",
    "events_occurred",
    "make_domain",
    "shipped_domains",
    "step_agent",
    "step_team",
    "__version__",
]
