"""Independent Q-learning: asynchronous per-agent Q-learning from one
shared trajectory under a fixed behavior policy.

Every agent sees only its local (s^i, a^i) pair of the shared
transition and applies the tabular update

    Q^i(S_k^i, A_k^i) += alpha_k (R^i + gamma max_a Q^i(S_{k+1}^i, a) - Q^i)

with alpha_k = alpha / (k + k0).  Defaults follow the convergence
theorem: alpha = 2 / (sigma' (1 - gamma)) and
k0 = max(4 alpha, 2 M2 log K), with sigma' and M2 measured on the
behavior-policy chain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from iltab.errors import ExplorationViolation
from iltab.mdp import FactoredMdp, FactoredPolicy, JointPolicy, joint_policy_of
from iltab.records import RunRecord
from iltab.rng import stream
from iltab import solvers


@dataclass
class IqlConfig:
    K: int
    alpha: float | None = None  # default 2 / (sigma' (1 - gamma))
    k0: float | None = None  # default max(4 alpha, 2 M2_hat log K)
    seed: int = 0
    behavior: FactoredPolicy | None = None  # default uniform
    eval_stride: int = 0  # 0 disables metric snapshots
    start_dist: np.ndarray | None = None  # default uniform over joint states


@dataclass
class IqlResult:
    qs: list[np.ndarray]  # per-agent local tables [s^i][a^i]
    policy: FactoredPolicy
    record: RunRecord
    alpha: float
    k0: float


@dataclass
class MetricOracles:
    """Precomputed exact quantities consumed by metric snapshots."""

    q_targets: list[np.ndarray] | None  # aggregated fixed points, per agent
    opt_avg: float | None  # optimal average reward (normalizer)
    start_dist: np.ndarray | None


def induced_greedy_factored(qs: list[np.ndarray]) -> FactoredPolicy:
    """Per-agent deterministic argmax policy, lowest-index tie-break."""
    tables = []
    for q in qs:
        t = np.zeros_like(q)
        t[np.arange(q.shape[0]), q.argmax(axis=1)] = 1.0
        tables.append(t)
    return FactoredPolicy(tuple(tables))


class TrajectorySim:
    """Shared-trajectory simulator over a factored MDP.

    Draws per-agent actions by inverse-CDF from each agent's policy row
    and the next joint state by inverse-CDF from the joint row, all from
    one counter-based stream, so runs are bit-reproducible.
    """

    def __init__(self, mdp: FactoredMdp, seed: int, key: tuple[int, ...] = ()):
        self.mdp = mdp
        self.rng = stream(seed, *key)
        self.trans_cumsum = np.cumsum(mdp.transition, axis=2)
        self.s_loc = np.array(mdp.state_local_table())
        self.a_loc = np.array(mdp.action_local_table())
        strides = []
        acc = 1
        for size in reversed(mdp.local_action_sizes):
            strides.append(acc)
            acc *= size
        self.a_strides = list(reversed(strides))

    def start_state(self, start_dist: np.ndarray | None) -> int:
        if start_dist is None:
            return int(self.rng.integers(self.mdp.num_states))
        c = np.cumsum(start_dist)
        return int(min(np.searchsorted(c, self.rng.random(), side="right"), len(c) - 1))

    def sample_local_actions(self, pol_cumsum: list[np.ndarray], s_locals) -> tuple[list[int], int]:
        a_joint = 0
        locs = []
        for i, c in enumerate(pol_cumsum):
            row = c[s_locals[i]]
            ai = int(min(np.searchsorted(row, self.rng.random(), side="right"), len(row) - 1))
            locs.append(ai)
            a_joint += ai * self.a_strides[i]
        return locs, a_joint

    def step_state(self, s: int, a: int) -> int:
        row = self.trans_cumsum[a, s]
        return int(min(np.searchsorted(row, self.rng.random(), side="right"), len(row) - 1))


def _policy_cumsums(pi: FactoredPolicy) -> list[np.ndarray]:
    out = []
    for t in pi.tables:
        if t.min() <= 0.0:
            raise ExplorationViolation("sampling policy assigns zero probability to a local action")
        out.append(np.cumsum(t, axis=1))
    return out


def default_oracles(mdp: FactoredMdp, behavior: FactoredPolicy,
                    start_dist: np.ndarray | None) -> MetricOracles:
    pi_b = joint_policy_of(behavior, mdp.local_state_sizes, mdp.local_action_sizes)
    d = solvers.stationary_on_recurrent(mdp, pi_b, start_dist).d
    q_targets = [solvers.aggregated_fixed_point(mdp, i, d, "optimality", allow_zero_cells=True)
                 for i in range(mdp.n)]
    q_star = solvers.value_iteration(mdp)
    opt_avg = solvers.average_reward(mdp, solvers.greedy_policy(q_star), start_dist)
    return MetricOracles(q_targets=q_targets, opt_avg=opt_avg, start_dist=start_dist)


def iql_run(mdp: FactoredMdp, cfg: IqlConfig, oracles: MetricOracles | None = None) -> IqlResult:
    behavior = cfg.behavior or FactoredPolicy.uniform(mdp.local_state_sizes, mdp.local_action_sizes)
    pol_cumsum = _policy_cumsums(behavior)
    alpha = cfg.alpha
    k0 = cfg.k0
    if alpha is None or k0 is None:
        pi_b = joint_policy_of(behavior, mdp.local_state_sizes, mdp.local_action_sizes)
        if alpha is None:
            sd = solvers.stationary_on_recurrent(mdp, pi_b, cfg.start_dist)
            if sd.sigma_prime <= 0:
                raise ExplorationViolation("behavior chain leaves some local cell unvisited; "
                                           "set alpha explicitly")
            alpha = 2.0 / (sd.sigma_prime * (1.0 - mdp.gamma))
        if k0 is None:
            prof = solvers.mixing_profile(mdp, pi_b, horizon=64, start_dist=cfg.start_dist)
            k0 = max(4.0 * alpha, 2.0 * prof.M2_hat * math.log(max(cfg.K, 2)))
    if cfg.eval_stride and oracles is None:
        oracles = default_oracles(mdp, behavior, cfg.start_dist)

    sim = TrajectorySim(mdp, cfg.seed, key=(0,))
    qs = [np.zeros((ns, na)) for ns, na in zip(mdp.local_state_sizes, mdp.local_action_sizes)]
    record = RunRecord(seed=cfg.seed)
    gamma = mdp.gamma
    rewards = mdp.rewards
    s = sim.start_state(cfg.start_dist)
    for k in range(cfg.K):
        s_locals = sim.s_loc[s]
        a_locals, a = sim.sample_local_actions(pol_cumsum, s_locals)
        s_next = sim.step_state(s, a)
        sn_locals = sim.s_loc[s_next]
        a_k = alpha / (k + k0)
        for i in range(mdp.n):
            si, ai = s_locals[i], a_locals[i]
            q = qs[i]
            td = rewards[i][si, ai] + gamma * q[sn_locals[i]].max() - q[si, ai]
            q[si, ai] += a_k * td
        s = s_next
        if cfg.eval_stride and ((k + 1) % cfg.eval_stride == 0 or k + 1 == cfg.K):
            _snapshot(mdp, qs, k + 1, record, oracles)
    return IqlResult(qs=qs, policy=induced_greedy_factored(qs), record=record, alpha=alpha, k0=k0)


def _snapshot(mdp: FactoredMdp, qs, step: int, record: RunRecord, oracles: MetricOracles) -> None:
    if oracles.q_targets is not None:
        for i, (q, target) in enumerate(zip(qs, oracles.q_targets)):
            record.add(step, i, "q_err_sup", float(np.abs(q - target).max()))
    if oracles.opt_avg:
        fp = induced_greedy_factored(qs)
        pi = joint_policy_of(fp, mdp.local_state_sizes, mdp.local_action_sizes)
        avg = solvers.average_reward(mdp, pi, oracles.start_dist)
        record.add(step, -1, "normalized_reward", avg / oracles.opt_avg)
