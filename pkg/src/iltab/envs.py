"""Synthetic 3-agent coordination MDP, agent groupings, and random
factored MDPs with tunable coupling.

The synthetic environment: agents 1-2 share a state bit that persists
iff they pick the same action; agent 3's bit is forced to 1 when its bit
is 0 and its action differs from agent 2's, and resamples uniformly
otherwise.  Each agent earns one unit of reward per step its bit
persists.

Persistence depends on the transition, not on (s^i, a^i) alone, so each
local state carries the bit together with a flag recording whether the
bit persisted on the previous step; the reward reads the flag.  This
shifts each agent's reward stream by one step, which leaves long-run
average rewards (and hence all normalized-reward metrics) unchanged.
Local encoding: s^i = 2*bit + flag.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from iltab.dependence import SeparableKernel
from iltab.errors import InvalidPartition
from iltab.indexing import compose_index, local_index_table
from iltab.mdp import FactoredMdp, check_valid
from iltab.rng import stream


def synthetic3(gamma: float = 0.99) -> FactoredMdp:
    """The 3-agent coordination MDP; |S^i| = 4 (bit, flag), |A^i| = 2.

    States with unequal agent-1/2 bits are off the coupled slice the
    environment is defined on; from them, bits 1-2 transition
    deterministically to (0, 0).  The slice (equal bits, equal flags) is
    closed, and all experiments start inside it, so the completion never
    influences on-slice metrics.
    """
    sizes = (4, 4, 4)
    asizes = (2, 2, 2)
    num_s, num_a = 64, 8
    trans = np.zeros((num_a, num_s, num_s))
    s_locals = local_index_table(sizes)
    a_locals = local_index_table(asizes)
    for a in range(num_a):
        a1, a2, a3 = a_locals[a]
        for s in range(num_s):
            s1, s2, s3 = s_locals[s]
            b1, b2, b3 = s1 >> 1, s2 >> 1, s3 >> 1
            if b1 == b2:
                nb1 = b1 if a1 == a2 else 1 - b1
                nb2 = nb1
            else:
                nb1 = nb2 = 0
            nf1 = 1 if nb1 == b1 else 0
            nf2 = 1 if nb2 == b2 else 0
            if b3 == 0 and a2 != a3:
                b3_next = [(1, 1.0)]
            else:
                b3_next = [(0, 0.5), (1, 0.5)]
            for nb3, p in b3_next:
                nf3 = 1 if nb3 == b3 else 0
                sp = compose_index((2 * nb1 + nf1, 2 * nb2 + nf2, 2 * nb3 + nf3), sizes)
                trans[a, s, sp] += p
    # reward = the persistence flag, independent of the action
    rew = np.zeros((4, 2))
    rew[1, :] = 1.0
    rew[3, :] = 1.0
    return check_valid(FactoredMdp(n=3, local_state_sizes=sizes, local_action_sizes=asizes,
                                   transition=trans, rewards=(rew, rew, rew), gamma=gamma))


def synthetic3_slice_states(sizes: tuple[int, ...] = (4, 4, 4)) -> list[int]:
    """Joint states with equal agent-1/2 bits and flags (the closed slice)."""
    out = []
    for s, (s1, s2, s3) in enumerate(local_index_table(sizes)):
        if s1 == s2:
            out.append(s)
    return out


def synthetic3_start_dist(mdp: FactoredMdp) -> np.ndarray:
    slice_states = synthetic3_slice_states(mdp.local_state_sizes)
    d = np.zeros(mdp.num_states)
    d[slice_states] = 1.0 / len(slice_states)
    return d


@dataclass(frozen=True)
class Grouping:
    """Ordered partition of the agents into super-agents (0-based)."""

    groups: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "groups", tuple(tuple(g) for g in self.groups))

    def check(self, n: int) -> None:
        flat = [i for g in self.groups for i in g]
        if sorted(flat) != list(range(n)):
            raise InvalidPartition(f"groups {self.groups} do not partition 0..{n - 1}")


OPTION_GROUPINGS = {
    "12": Grouping(((0, 1), (2,))),
    "23": Grouping(((1, 2), (0,))),
    "13": Grouping(((0, 2), (1,))),
}


def grouping_permutations(mdp: FactoredMdp, g: Grouping) -> tuple[np.ndarray, np.ndarray]:
    """state_perm[new_joint] = old_joint (and likewise for actions)."""
    g.check(mdp.n)
    new_state_sizes = [math.prod(mdp.local_state_sizes[i] for i in grp) for grp in g.groups]
    new_action_sizes = [math.prod(mdp.local_action_sizes[i] for i in grp) for grp in g.groups]

    def perm(new_sizes, old_sizes):
        out = np.zeros(math.prod(new_sizes), dtype=int)
        for new_joint, new_locals in enumerate(local_index_table(new_sizes)):
            old_locals = [0] * mdp.n
            for grp, sup in zip(g.groups, new_locals):
                member_sizes = [old_sizes[i] for i in grp]
                members = np.unravel_index(sup, member_sizes) if len(grp) > 1 else (sup,)
                for i, v in zip(grp, members):
                    old_locals[i] = int(v)
            out[new_joint] = compose_index(old_locals, old_sizes)
        return out

    return perm(new_state_sizes, mdp.local_state_sizes), perm(new_action_sizes, mdp.local_action_sizes)


def grouped_view(mdp: FactoredMdp, g: Grouping) -> FactoredMdp:
    """Merge each group into one super-agent.

    Pure relabeling of the joint dynamics.  Rewards are summed within
    each group and all agents' rewards are divided by the maximum group
    size, the single global scale that keeps every reward in [0, 1]; the
    joint total reward is therefore the original divided by that scale,
    which cancels in normalized-reward metrics.
    """
    g.check(mdp.n)
    state_perm, action_perm = grouping_permutations(mdp, g)
    new_state_sizes = tuple(math.prod(mdp.local_state_sizes[i] for i in grp) for grp in g.groups)
    new_action_sizes = tuple(math.prod(mdp.local_action_sizes[i] for i in grp) for grp in g.groups)
    trans = mdp.transition[np.ix_(action_perm, state_perm, state_perm)]
    scale = max(len(grp) for grp in g.groups)
    rewards = []
    for m, grp in enumerate(g.groups):
        r = np.zeros((new_state_sizes[m], new_action_sizes[m]))
        member_s_sizes = [mdp.local_state_sizes[i] for i in grp]
        member_a_sizes = [mdp.local_action_sizes[i] for i in grp]
        for sup_s, s_members in enumerate(local_index_table(member_s_sizes)):
            for sup_a, a_members in enumerate(local_index_table(member_a_sizes)):
                r[sup_s, sup_a] = sum(mdp.rewards[i][s_members[k], a_members[k]]
                                      for k, i in enumerate(grp)) / scale
        rewards.append(r)
    return check_valid(FactoredMdp(n=len(g.groups), local_state_sizes=new_state_sizes,
                                   local_action_sizes=new_action_sizes, transition=trans,
                                   rewards=tuple(rewards), gamma=mdp.gamma))


@dataclass(frozen=True)
class RandomMdpSpec:
    n: int
    state_sizes: tuple[int, ...]
    action_sizes: tuple[int, ...]
    coupling: float  # lambda in [0, 1]
    seed: int
    gamma: float = 0.9


def random_factored_mdp_with_witness(spec: RandomMdpSpec) -> tuple[FactoredMdp, SeparableKernel]:
    """P_a = (1 - lambda) * product kernel + lambda * random joint kernel.

    The product part is a feasible separable kernel, so the dependence
    level is at most lambda; that witness kernel is returned alongside.
    """
    if not 0.0 <= spec.coupling <= 1.0:
        raise ValueError("coupling must be in [0, 1]")
    rng = stream(spec.seed, 0xE0)
    num_s = math.prod(spec.state_sizes)
    num_a = math.prod(spec.action_sizes)
    mats = tuple(rng.dirichlet(np.ones(ns), size=(na, ns))
                 for ns, na in zip(spec.state_sizes, spec.action_sizes))
    witness = SeparableKernel(mats)
    s_locals = local_index_table(spec.state_sizes)
    a_locals = local_index_table(spec.action_sizes)
    prod = np.zeros((num_a, num_s, num_s))
    for a in range(num_a):
        for s in range(num_s):
            row = np.ones(1)
            for i in range(spec.n):
                row = np.kron(row, mats[i][a_locals[a][i], s_locals[s][i]])
            prod[a, s] = row
    joint = rng.dirichlet(np.ones(num_s), size=(num_a, num_s))
    trans = (1.0 - spec.coupling) * prod + spec.coupling * joint
    trans = trans / trans.sum(axis=2, keepdims=True)
    rewards = tuple(rng.uniform(0.0, 1.0, size=(ns, na))
                    for ns, na in zip(spec.state_sizes, spec.action_sizes))
    mdp = check_valid(FactoredMdp(n=spec.n, local_state_sizes=tuple(spec.state_sizes),
                                  local_action_sizes=tuple(spec.action_sizes),
                                  transition=trans, rewards=rewards, gamma=spec.gamma))
    return mdp, witness


def random_factored_mdp(spec: RandomMdpSpec) -> FactoredMdp:
    return random_factored_mdp_with_witness(spec)[0]
