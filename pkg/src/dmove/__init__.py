"""Distributional variable elimination for multi-objective coordination graphs.

Computes the set of joint policies whose return distributions are
non-dominated under first-order stochastic dominance, with continuous return
distributions learned by conditional coupling flows from sampled environment
interactions.
"""

from .distributions import (
    CdfGrid,
    ReturnDistribution,
    cdf_at,
    convolve,
    esr_dominates,
    expected_value,
    point_mass,
)
from .engine import EsrMember, EsrSolution, dmove, init_rsfs
from .environments import (
    SurrogateParams,
    SyntheticEnv,
    Turbine,
    WindCondition,
    WindFarmEnv,
    build_dependency_graph,
    make_synthetic,
)
from .flow import Adam, FlowModel, one_hot
from .graph import (
    CoordinationGraph,
    FactorScope,
    apply_elimination,
    build_graph,
    default_elimination_order,
    enumerate_local_actions,
    neighbors,
)
from .learning import LearnConfig, ReplayBuffer, learn, sample_batch, train_models
from .oracle import ComparisonReport, brute_force_esr_set, compare, enumerate_joint_returns
from .pruning import (
    DistributionSet,
    TaggedDistribution,
    cross_sum,
    esr_prune,
    no_prune,
    prune_and_cross_sum,
)

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "CdfGrid",
    "ComparisonReport",
    "CoordinationGraph",
    "DistributionSet",
    "EsrMember",
    "EsrSolution",
    "FactorScope",
    "FlowModel",
    "LearnConfig",
    "ReplayBuffer",
    "ReturnDistribution",
    "SurrogateParams",
    "SyntheticEnv",
    "TaggedDistribution",
    "Turbine",
    "WindCondition",
    "WindFarmEnv",
    "apply_elimination",
    "brute_force_esr_set",
    "build_dependency_graph",
    "build_graph",
    "cdf_at",
    "compare",
    "convolve",
    "cross_sum",
    "default_elimination_order",
    "dmove",
    "enumerate_joint_returns",
    "enumerate_local_actions",
    "esr_dominates",
    "esr_prune",
    "expected_value",
    "init_rsfs",
    "learn",
    "make_synthetic",
    "neighbors",
    "no_prune",
    "one_hot",
    "point_mass",
    "prune_and_cross_sum",
    "sample_batch",
    "train_models",
]
