"""Independent natural actor-critic: softmax factored policies, a TD
policy-evaluation inner loop (ITD), and independent natural policy
gradient outer updates.

The theorem stepsize schedule grows super-geometrically and overflows
float range within a few dozen iterations, so the default mode applies
the update in normalized log-probability space and treats an overflowed
eta as a greedy (argmax point-mass) policy-improvement step, the
policy-iteration limit of the schedule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from iltab.errors import ExplorationViolation, NonFinite
from iltab.mdp import FactoredMdp, FactoredPolicy, JointPolicy, joint_policy_of
from iltab.records import RunRecord
from iltab import solvers
from iltab.iql import TrajectorySim, _policy_cumsums

# log-probability floor: exp underflows to exactly 0 but stays finite
LOG_ZERO = -1e6
# eta values beyond this act as a greedy step even before hitting inf
ETA_GREEDY_THRESHOLD = 1e300


def softmax_policy(theta: list[np.ndarray]) -> FactoredPolicy:
    """Row-wise softmax with max-subtraction for overflow safety."""
    tables = []
    for th in theta:
        if not np.all(np.isfinite(th)):
            raise NonFinite("softmax parameters contain NaN or infinity")
        z = th - th.max(axis=1, keepdims=True)
        e = np.exp(z)
        tables.append(e / e.sum(axis=1, keepdims=True))
    return FactoredPolicy(tuple(tables))


def eta_schedule(t: int, gamma: float, joint_action_size: int, n: int,
                 history: list[float], eta0: float | None = None,
                 growth: str = "theorem") -> float:
    """Stepsize schedule; theorem growth takes the recursive lower bound
    with equality, plain growth is the experiment variant
    eta_t = sum(history) / gamma^(2t-1).  Overflow returns math.inf,
    which policy-space callers treat as a greedy step."""
    if len(history) != t:
        raise ValueError(f"history has {len(history)} entries for t={t}")
    if t == 0:
        return gamma * math.log(joint_action_size) if eta0 is None else eta0
    total = math.fsum(history)
    if not math.isfinite(total):
        return math.inf
    denom = gamma ** (2 * t - 1)
    if growth == "theorem":
        value = 2.0 * n * math.log(joint_action_size) * total / ((1.0 - gamma) * denom)
    elif growth == "plain":
        value = total / denom
    else:
        raise ValueError(f"unknown growth {growth!r}")
    return value if math.isfinite(value) else math.inf


def inpg_step(theta: list[np.ndarray], eta_t: float, qs: list[np.ndarray],
              mode: str = "raw") -> list[np.ndarray]:
    """theta^i += eta_t * Q^i.

    mode="raw": plain parameter update; raises NonFinite on overflow.
    mode="policy-space": theta holds normalized log-probabilities; the
    update adds eta_t * Q^i and renormalizes by log-sum-exp, and an
    overflowed eta becomes an argmax point mass (lowest-index ties).
    """
    if eta_t < 0:
        raise ValueError("eta must be nonnegative")
    out = []
    if mode == "raw":
        for th, q in zip(theta, qs):
            with np.errstate(over="ignore", invalid="ignore"):
                nxt = th + eta_t * q
            if not np.all(np.isfinite(nxt)):
                raise NonFinite("parameter overflow in raw mode; use policy-space mode")
            out.append(nxt)
        return out
    if mode != "policy-space":
        raise ValueError(f"unknown mode {mode!r}")
    greedy = not math.isfinite(eta_t) or eta_t > ETA_GREEDY_THRESHOLD
    for th, q in zip(theta, qs):
        if greedy:
            nxt = np.full_like(th, LOG_ZERO)
            nxt[np.arange(q.shape[0]), q.argmax(axis=1)] = 0.0
        else:
            nxt = th + eta_t * q
            m = nxt.max(axis=1, keepdims=True)
            nxt = nxt - m - np.log(np.exp(nxt - m).sum(axis=1, keepdims=True))
            nxt = np.maximum(nxt, LOG_ZERO)
        out.append(nxt)
    return out


def npg_equivalence_check(theta: list[np.ndarray], eta: float, qs: list[np.ndarray],
                          state_sizes, action_sizes) -> float:
    """Max entrywise deviation between the joint policy obtained from
    per-agent parameter updates and the direct joint Q-NPG update
    pi'(a|s) proportional to pi(a|s) exp(eta sum_i Q^i(s^i, a^i))."""
    via_params = joint_policy_of(softmax_policy(inpg_step(theta, eta, qs, mode="raw")),
                                 state_sizes, action_sizes)
    base = joint_policy_of(softmax_policy(theta), state_sizes, action_sizes)
    from iltab.indexing import local_index_table
    s_locals = local_index_table(state_sizes)
    a_locals = local_index_table(action_sizes)
    table = np.array(base.table, dtype=float).copy()
    for s, s_loc in enumerate(s_locals):
        boost = np.array([sum(qs[i][s_loc[i], a_loc[i]] for i in range(len(qs)))
                          for a_loc in a_locals])
        row = table[s] * np.exp(eta * (boost - boost.max()))
        table[s] = row / row.sum()
    return float(np.abs(via_params.table - table).max())


@dataclass
class InacConfig:
    T: int
    K: int
    alpha: float = 0.05
    k0: float = 0.2
    seed: int = 0
    eta_mode: str = "policy-space-schedule"  # or "theorem-schedule", "constant"
    eta_const: float = 1.0  # used by eta_mode="constant"
    eta0: float | None = None  # None -> gamma log|A|
    eta_growth: str = "theorem"  # or "plain" (experiment variant)
    epsilon_explore: float = 0.0
    epsilon_decay: bool = False  # eps_k = epsilon * (1 - k/K) within the inner loop
    start_dist: np.ndarray | None = None
    eval_metrics: bool = False
    record_critic_error: bool = False
    exact_critic_kernel: object | None = None  # SeparableKernel: use exact local Q oracle


@dataclass
class InacResult:
    theta: list[np.ndarray]
    policy: FactoredPolicy
    record: RunRecord
    etas: list[float]


def itd_run(mdp: FactoredMdp, pi: FactoredPolicy, K: int, alpha: float, k0: float,
            seed: int, sample_pi: FactoredPolicy | None = None,
            epsilon: float = 0.0, epsilon_decay: bool = False,
            start_dist: np.ndarray | None = None,
            eval_stride: int = 0, record: RunRecord | None = None,
            targets: list[np.ndarray] | None = None,
            step_offset: int = 0) -> list[np.ndarray]:
    """Expected-backup TD evaluation of pi from one shared trajectory.

    The backup uses pi itself; sampling uses sample_pi (default pi),
    optionally mixed with a uniform epsilon that can decay linearly to 0
    over the K inner steps.  Q^i_{t,0} = 0 every call.
    """
    base = sample_pi or pi
    sim = TrajectorySim(mdp, seed, key=(1,))
    qs = [np.zeros((ns, na)) for ns, na in zip(mdp.local_state_sizes, mdp.local_action_sizes)]
    gamma = mdp.gamma
    rewards = mdp.rewards
    pi_tables = pi.tables
    s = sim.start_state(start_dist)
    recompute_every = max(1, K // 50) if epsilon_decay else K + 1
    eps = epsilon
    pol_cumsum = _mixed_cumsums(base, eps)
    for k in range(K):
        if epsilon_decay and k % recompute_every == 0:
            eps = epsilon * (1.0 - k / K)
            pol_cumsum = _mixed_cumsums(base, eps)
        s_locals = sim.s_loc[s]
        a_locals, a = sim.sample_local_actions(pol_cumsum, s_locals)
        s_next = sim.step_state(s, a)
        sn_locals = sim.s_loc[s_next]
        a_k = alpha / (k + k0)
        for i in range(mdp.n):
            si, ai = s_locals[i], a_locals[i]
            q = qs[i]
            sn = sn_locals[i]
            expected = float(pi_tables[i][sn] @ q[sn])
            q[si, ai] += a_k * (rewards[i][si, ai] + gamma * expected - q[si, ai])
        s = s_next
        if eval_stride and record is not None and targets is not None \
                and ((k + 1) % eval_stride == 0 or k + 1 == K):
            for i, (q, tgt) in enumerate(zip(qs, targets)):
                record.add(step_offset + k + 1, i, "itd_err_sup", float(np.abs(q - tgt).max()))
    return qs


def _mixed_cumsums(pi: FactoredPolicy, eps: float) -> list[np.ndarray]:
    tables = []
    for t in pi.tables:
        na = t.shape[1]
        mixed = (1.0 - eps) * t + eps / na
        tables.append(mixed)
    fp = FactoredPolicy(tuple(tables))
    return _policy_cumsums(fp)


def _exact_local_q(kernel_mats: np.ndarray, rewards_i: np.ndarray, gamma: float,
                   pi_i: np.ndarray) -> np.ndarray:
    """Q-function of one agent's factor MDP under its local policy."""
    ns, na = rewards_i.shape
    # kernel_mats is [a^i][s^i][s'^i]; chain M(s,s') = sum_a pi(a|s) P_a(s,s')
    m = np.einsum("sa,ast->st", pi_i, kernel_mats)
    b = (pi_i * rewards_i).sum(axis=1)
    v = np.linalg.solve(np.eye(ns) - gamma * m, b)
    return rewards_i + gamma * np.einsum("ast,t->sa", kernel_mats, v)


def inac_run(mdp: FactoredMdp, cfg: InacConfig) -> InacResult:
    """Outer INPG loop around the ITD critic.

    theta starts at zero (uniform policy).  In policy-space mode theta
    holds normalized log-probabilities; in the other modes it is the raw
    softmax parameter.
    """
    mode = "policy-space" if cfg.eta_mode == "policy-space-schedule" else "raw"
    theta = [np.zeros((ns, na)) - (0.0 if mode == "raw" else math.log(na))
             for ns, na in zip(mdp.local_state_sizes, mdp.local_action_sizes)]
    record = RunRecord(seed=cfg.seed)
    etas: list[float] = []
    joint_a = mdp.num_actions
    q_star = None
    opt_avg = None
    if cfg.eval_metrics:
        q_star = solvers.value_iteration(mdp)
        opt_avg = solvers.average_reward(mdp, solvers.greedy_policy(q_star), cfg.start_dist)
    for t in range(cfg.T):
        pi = softmax_policy(theta)
        if cfg.eval_metrics:
            pi_joint = joint_policy_of(pi, mdp.local_state_sizes, mdp.local_action_sizes)
            q_t = solvers.policy_q(mdp, pi_joint)
            record.add(t, -1, "q_gap_sup", float(np.abs(q_star - q_t).max()))
            avg = solvers.average_reward(mdp, pi_joint, cfg.start_dist)
            record.add(t, -1, "normalized_reward", avg / opt_avg if opt_avg else 0.0)
        if cfg.exact_critic_kernel is not None:
            qs = [_exact_local_q(cfg.exact_critic_kernel.matrices[i], mdp.rewards[i],
                                 mdp.gamma, pi.tables[i]) for i in range(mdp.n)]
        else:
            qs = itd_run(mdp, pi, cfg.K, cfg.alpha, cfg.k0, seed=cfg.seed * 1000003 + t,
                         epsilon=cfg.epsilon_explore, epsilon_decay=cfg.epsilon_decay,
                         start_dist=cfg.start_dist)
            if cfg.record_critic_error:
                pi_joint = joint_policy_of(pi, mdp.local_state_sizes, mdp.local_action_sizes)
                d = solvers.stationary_on_recurrent(mdp, pi_joint, cfg.start_dist).d
                for i in range(mdp.n):
                    tgt = solvers.aggregated_fixed_point(mdp, i, d, "evaluation", pi=pi_joint,
                                                         allow_zero_cells=True)
                    record.add(t, i, "critic_err_sup", float(np.abs(qs[i] - tgt).max()))
        if cfg.eta_mode == "constant":
            eta = cfg.eta_const
        else:
            eta = eta_schedule(t, mdp.gamma, joint_a, mdp.n, etas,
                               eta0=cfg.eta0, growth=cfg.eta_growth)
        etas.append(eta)
        theta = inpg_step(theta, eta, qs, mode=mode)
    final_pi = softmax_policy(theta)
    if cfg.eval_metrics:
        pi_joint = joint_policy_of(final_pi, mdp.local_state_sizes, mdp.local_action_sizes)
        q_t = solvers.policy_q(mdp, pi_joint)
        record.add(cfg.T, -1, "q_gap_sup", float(np.abs(q_star - q_t).max()))
        avg = solvers.average_reward(mdp, pi_joint, cfg.start_dist)
        record.add(cfg.T, -1, "normalized_reward", avg / opt_avg if opt_avg else 0.0)
    return InacResult(theta=theta, policy=final_pi, record=record, etas=etas)
