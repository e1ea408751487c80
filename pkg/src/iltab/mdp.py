"""Factored MDP data model, validation, sampling, and JSON persistence."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from iltab.errors import ValidationFailure
from iltab.indexing import decompose_index, local_index_table
from iltab.rng import inverse_cdf

ROW_SUM_TOL = 1e-12


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class FactoredMdp:
    """Joint transition kernel with per-agent factored rewards.

    transition is indexed [joint action][joint state][joint next state];
    rewards[i] is indexed [s^i][a^i] with values in [0, 1].
    """

    n: int
    local_state_sizes: tuple[int, ...]
    local_action_sizes: tuple[int, ...]
    transition: np.ndarray
    rewards: tuple[np.ndarray, ...]
    gamma: float

    def __post_init__(self):
        object.__setattr__(self, "local_state_sizes", tuple(self.local_state_sizes))
        object.__setattr__(self, "local_action_sizes", tuple(self.local_action_sizes))
        object.__setattr__(self, "transition", _freeze(self.transition))
        object.__setattr__(self, "rewards", tuple(_freeze(r) for r in self.rewards))

    @property
    def num_states(self) -> int:
        return math.prod(self.local_state_sizes)

    @property
    def num_actions(self) -> int:
        return math.prod(self.local_action_sizes)

    def state_locals(self, s: int) -> tuple[int, ...]:
        return decompose_index(s, self.local_state_sizes)

    def action_locals(self, a: int) -> tuple[int, ...]:
        return decompose_index(a, self.local_action_sizes)

    def state_local_table(self) -> list[tuple[int, ...]]:
        return local_index_table(self.local_state_sizes)

    def action_local_table(self) -> list[tuple[int, ...]]:
        return local_index_table(self.local_action_sizes)


@dataclass(frozen=True)
class JointPolicy:
    """Table pi indexed [s][a]; each row a distribution over joint actions."""

    table: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "table", _freeze(self.table))


@dataclass(frozen=True)
class FactoredPolicy:
    """Per-agent tables pi^i indexed [s^i][a^i]."""

    tables: tuple[np.ndarray, ...]

    def __post_init__(self):
        object.__setattr__(self, "tables", tuple(_freeze(t) for t in self.tables))

    @staticmethod
    def uniform(state_sizes: Sequence[int], action_sizes: Sequence[int]) -> "FactoredPolicy":
        return FactoredPolicy(tuple(np.full((ns, na), 1.0 / na) for ns, na in zip(state_sizes, action_sizes)))


def joint_policy_of(fp: FactoredPolicy, state_sizes: Sequence[int], action_sizes: Sequence[int]) -> JointPolicy:
    """Joint table pi(a|s) = prod_i pi^i(a^i|s^i)."""
    num_s = math.prod(state_sizes)
    num_a = math.prod(action_sizes)
    s_locals = local_index_table(state_sizes)
    a_locals = local_index_table(action_sizes)
    table = np.ones((num_s, num_a))
    for s in range(num_s):
        for a in range(num_a):
            p = 1.0
            for i, (si, ai) in enumerate(zip(s_locals[s], a_locals[a])):
                p *= fp.tables[i][si, ai]
            table[s, a] = p
    return JointPolicy(table)


def total_reward(mdp: FactoredMdp, s: int, a: int) -> float:
    """R(s, a) = sum_i R^i(s^i, a^i)."""
    s_loc = mdp.state_locals(s)
    a_loc = mdp.action_locals(a)
    return float(sum(mdp.rewards[i][s_loc[i], a_loc[i]] for i in range(mdp.n)))


def reward_vector(mdp: FactoredMdp) -> np.ndarray:
    """Dense total reward indexed [s][a]."""
    out = np.zeros((mdp.num_states, mdp.num_actions))
    s_locals = mdp.state_local_table()
    a_locals = mdp.action_local_table()
    for i in range(mdp.n):
        ri = mdp.rewards[i]
        si = np.array([t[i] for t in s_locals])
        ai = np.array([t[i] for t in a_locals])
        out += ri[np.ix_(si, ai)]
    return out


def sample_transition(mdp: FactoredMdp, s: int, a: int, rng: np.random.Generator) -> int:
    """Draw s' from P_a(s, .) by inverse-CDF over the row in index order."""
    if not 0 <= s < mdp.num_states or not 0 <= a < mdp.num_actions:
        raise IndexError(f"state {s} or action {a} out of range")
    row = mdp.transition[a, s]
    c = np.cumsum(row)
    idx = inverse_cdf(c, rng.random())
    idx = min(idx, len(row) - 1)
    while row[idx] == 0.0 and idx > 0:
        idx -= 1
    return idx


def validate(mdp: FactoredMdp) -> list[str]:
    """Every violated invariant, as human-readable strings; empty iff valid."""
    report: list[str] = []
    if mdp.n != len(mdp.local_state_sizes) or mdp.n != len(mdp.local_action_sizes):
        report.append(f"agent count {mdp.n} does not match size lists "
                      f"({len(mdp.local_state_sizes)} states, {len(mdp.local_action_sizes)} actions)")
        return report
    num_s, num_a = mdp.num_states, mdp.num_actions
    if mdp.transition.shape != (num_a, num_s, num_s):
        report.append(f"transition shape {mdp.transition.shape} != expected {(num_a, num_s, num_s)}")
        return report
    if not 0.0 < mdp.gamma < 1.0:
        report.append(f"gamma {mdp.gamma} not in (0, 1)")
    if np.any(mdp.transition < 0) or np.any(mdp.transition > 1):
        bad = np.argwhere((mdp.transition < 0) | (mdp.transition > 1))[0]
        report.append(f"transition probability out of [0,1] at a={bad[0]}, s={bad[1]}, s'={bad[2]}")
    sums = mdp.transition.sum(axis=2)
    bad_rows = np.argwhere(np.abs(sums - 1.0) > ROW_SUM_TOL)
    for a, s in bad_rows[:20]:
        report.append(f"row sum {sums[a, s]!r} != 1 at action {a}, state {s}")
    for i, r in enumerate(mdp.rewards):
        if r.shape != (mdp.local_state_sizes[i], mdp.local_action_sizes[i]):
            report.append(f"reward array for agent {i} has shape {r.shape}, expected "
                          f"{(mdp.local_state_sizes[i], mdp.local_action_sizes[i])}")
            continue
        if np.any(r < 0) or np.any(r > 1):
            si, ai = np.argwhere((r < 0) | (r > 1))[0]
            report.append(f"reward {r[si, ai]} out of [0,1] for agent {i} at s^i={si}, a^i={ai}")
    return report


def check_valid(mdp: FactoredMdp) -> FactoredMdp:
    report = validate(mdp)
    if report:
        raise ValidationFailure("; ".join(report))
    return mdp


def validate_joint_policy(pi: JointPolicy) -> list[str]:
    report = []
    sums = pi.table.sum(axis=1)
    for s in np.flatnonzero(np.abs(sums - 1.0) > ROW_SUM_TOL)[:20]:
        report.append(f"policy row sum {sums[s]!r} != 1 at state {s}")
    if np.any(pi.table < 0):
        report.append("negative policy probability")
    return report


def save_mdp(mdp: FactoredMdp, path: str) -> None:
    obj = {
        "n": mdp.n,
        "local_state_sizes": list(mdp.local_state_sizes),
        "local_action_sizes": list(mdp.local_action_sizes),
        "gamma": mdp.gamma,
        "rewards": [r.tolist() for r in mdp.rewards],
        "transition": mdp.transition.tolist(),
    }
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(obj, f)
        f.write("\n")


def load_mdp(path: str) -> FactoredMdp:
    with open(path, "r", encoding="utf-8") as f:
        obj = json.load(f)
    mdp = FactoredMdp(
        n=int(obj["n"]),
        local_state_sizes=tuple(obj["local_state_sizes"]),
        local_action_sizes=tuple(obj["local_action_sizes"]),
        transition=np.array(obj["transition"], dtype=float),
        rewards=tuple(np.array(r, dtype=float) for r in obj["rewards"]),
        gamma=float(obj["gamma"]),
    )
    return check_valid(mdp)
