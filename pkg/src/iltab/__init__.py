"""Tabular cooperative multi-agent RL laboratory.

Independent Q-learning and independent natural actor-critic on factored
MDPs, dependence-level estimation over separable kernels, and exact
dynamic-programming oracles for verifying the convergence bounds.
"""

from iltab.mdp import (
    FactoredMdp,
    FactoredPolicy,
    JointPolicy,
    joint_policy_of,
    load_mdp,
    sample_transition,
    save_mdp,
    total_reward,
    validate,
)
from iltab.indexing import compose_index, decompose_index

__all__ = [
    "FactoredMdp",
    "FactoredPolicy",
    "JointPolicy",
    "compose_index",
    "decompose_index",
    "joint_policy_of",
    "load_mdp",
    "sample_transition",
    "save_mdp",
    "total_reward",
    "validate",
]
