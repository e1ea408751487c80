"""Experiment orchestration, reward normalization, and bound
verification.

Reproduces the multi-seed training/testing protocol: each run trains one
learner, tests the final policy by Monte Carlo, and emits a per-run CSV
plus a cross-seed aggregate CSV; the report path also renders the mean
curve with a standard-deviation band to PNG next to the CSVs.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from iltab import solvers
from iltab.dependence import SeparableKernel, build_separable_mdp, max_tv_gap
from iltab.errors import IltabError
from iltab.iql import IqlConfig, MetricOracles, TrajectorySim, default_oracles, iql_run
from iltab.inac import InacConfig, _exact_local_q, inac_run
from iltab.mdp import FactoredMdp, FactoredPolicy, JointPolicy, joint_policy_of, reward_vector
from iltab.records import RunRecord, aggregate, write_aggregate_csv, write_run_csv
from iltab.rng import stream


def optimal_average_reward(mdp: FactoredMdp, start_dist: np.ndarray | None = None) -> float:
    """Long-run average reward of the value-iteration greedy policy,
    computed exactly on the recurrent classes reached from the start
    distribution."""
    q = solvers.value_iteration(mdp)
    return solvers.average_reward(mdp, solvers.greedy_policy(q), start_dist)


def _sample_cumsums(fp: FactoredPolicy) -> list[np.ndarray]:
    # unlike learner sampling, deterministic rows are fine here
    return [np.cumsum(t, axis=1) for t in fp.tables]


def monte_carlo_average_reward(mdp: FactoredMdp, fp: FactoredPolicy, episode_len: int,
                               episodes: int, seed: int,
                               start_dist: np.ndarray | None = None) -> float:
    """Monte-Carlo mean per-step total reward under a factored policy."""
    pol = _sample_cumsums(fp)
    r = reward_vector(mdp)
    total = 0.0
    for ep in range(episodes):
        sim = TrajectorySim(mdp, seed, key=(2, ep))
        s = sim.start_state(start_dist)
        for _ in range(episode_len):
            s_locals = sim.s_loc[s]
            _, a = sim.sample_local_actions(pol, s_locals)
            total += r[s, a]
            s = sim.step_state(s, a)
    return total / (episodes * episode_len)


def normalized_reward(mdp: FactoredMdp, fp: FactoredPolicy, episode_len: int, episodes: int,
                      seed: int, start_dist: np.ndarray | None = None,
                      normalizer: float | None = None) -> float:
    """Monte-Carlo per-step reward divided by the optimal average reward."""
    norm = optimal_average_reward(mdp, start_dist) if normalizer is None else normalizer
    if norm == 0.0:
        raise ZeroDivisionError("optimal average reward is 0; nothing to normalize by")
    return monte_carlo_average_reward(mdp, fp, episode_len, episodes, seed, start_dist) / norm


@dataclass
class ExperimentConfig:
    algorithm: str  # "iql" or "inac"
    mdp: FactoredMdp
    runs: int
    train_steps: int
    iql: IqlConfig | None = None  # prototype; seed overridden per run
    inac: InacConfig | None = None
    start_dist: np.ndarray | None = None
    seed: int = 0
    test_episode_len: int = 1000
    test_episodes: int = 1
    out_dir: str = "."
    label: str = "experiment"
    make_plot: bool = True
    threads: int = 1


def _single_run(cfg: ExperimentConfig, run_idx: int, oracles, normalizer: float) -> RunRecord:
    run_seed = cfg.seed + run_idx
    if cfg.algorithm == "iql":
        icfg = replace(cfg.iql, seed=run_seed, K=cfg.train_steps, start_dist=cfg.start_dist)
        result = iql_run(cfg.mdp, icfg, oracles=oracles)
        record = result.record
        final_policy = result.policy
        final_step = cfg.train_steps
    elif cfg.algorithm == "inac":
        ncfg = replace(cfg.inac, seed=run_seed, start_dist=cfg.start_dist, eval_metrics=True)
        result = inac_run(cfg.mdp, ncfg)
        record = result.record
        final_policy = result.policy
        final_step = ncfg.T
    else:
        raise ValueError(f"unknown algorithm {cfg.algorithm!r}")
    record.seed = run_seed
    test = normalized_reward(cfg.mdp, final_policy, cfg.test_episode_len, cfg.test_episodes,
                             seed=run_seed, start_dist=cfg.start_dist, normalizer=normalizer)
    record.add(final_step, -1, "test_normalized_reward", test)
    return record


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Execute seeded runs, aggregate across seeds, write CSVs (and the
    PNG report).  Returns paths and the in-memory records."""
    normalizer = optimal_average_reward(cfg.mdp, cfg.start_dist)
    oracles = None
    if cfg.algorithm == "iql" and cfg.iql is not None and cfg.iql.eval_stride:
        behavior = cfg.iql.behavior or FactoredPolicy.uniform(cfg.mdp.local_state_sizes,
                                                             cfg.mdp.local_action_sizes)
        oracles = default_oracles(cfg.mdp, behavior, cfg.start_dist)
    if cfg.threads > 1:
        with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
            records = list(pool.map(_single_run, [cfg] * cfg.runs, range(cfg.runs),
                                    [oracles] * cfg.runs, [normalizer] * cfg.runs))
    else:
        records = [_single_run(cfg, r, oracles, normalizer) for r in range(cfg.runs)]
    agg = aggregate(records)
    os.makedirs(cfg.out_dir, exist_ok=True)
    run_path = os.path.join(cfg.out_dir, f"{cfg.label}_runs.csv")
    agg_path = os.path.join(cfg.out_dir, f"{cfg.label}_aggregate.csv")
    png_path = os.path.join(cfg.out_dir, f"{cfg.label}.png")
    written = []
    try:
        write_run_csv(run_path, records)
        written.append(run_path)
        write_aggregate_csv(agg_path, agg)
        written.append(agg_path)
        if cfg.make_plot:
            _render_curve(agg, png_path, cfg.label)
            written.append(png_path)
    except Exception:
        for p in written:
            if os.path.exists(p):
                os.remove(p)
        raise
    return {"records": records, "aggregate": agg, "run_csv": run_path,
            "aggregate_csv": agg_path, "plot": png_path if cfg.make_plot else None}


def _render_curve(agg, png_path: str, label: str) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = [(s, m, sd) for s, metric, m, sd in agg if metric == "normalized_reward"]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    if rows:
        steps = np.array([r[0] for r in rows])
        means = np.array([r[1] for r in rows])
        stds = np.array([r[2] for r in rows])
        ax.plot(steps, means, label=label)
        ax.fill_between(steps, means - stds, means + stds, alpha=0.3)
    ax.set_xlabel("training step")
    ax.set_ylabel("normalized reward")
    ax.set_ylim(bottom=0.0)
    ax.grid(alpha=0.4)
    ax.legend()
    fig.tight_layout()
    fig.savefig(png_path, dpi=120)
    plt.close(fig)


@dataclass(frozen=True)
class BoundCheck:
    name: str
    lhs: float
    rhs: float

    @property
    def passed(self) -> bool:
        return self.lhs <= self.rhs + 1e-9

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs


@dataclass(frozen=True)
class BoundReport:
    dependence_upper: float
    checks: tuple[BoundCheck, ...]

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks)


def _local_value_iteration(kernel_i: np.ndarray, rewards_i: np.ndarray, gamma: float,
                           tol: float = 1e-12) -> np.ndarray:
    """Optimal Q of one agent's factor MDP (kernel [a^i][s^i][s'^i])."""
    ns, na = rewards_i.shape
    q = np.zeros((ns, na))
    thresh = tol * (1.0 - gamma) / (2.0 * gamma)
    while True:
        v = q.max(axis=1)
        q_next = rewards_i + gamma * np.einsum("ast,t->sa", kernel_i, v)
        if np.abs(q_next - q).max() <= thresh:
            return q_next
        q = q_next


def _random_factored_policies(mdp: FactoredMdp, count: int, seed: int) -> list[FactoredPolicy]:
    rng = stream(seed, 0xF1)
    out = [FactoredPolicy.uniform(mdp.local_state_sizes, mdp.local_action_sizes)]
    for _ in range(count):
        out.append(FactoredPolicy(tuple(
            rng.dirichlet(np.ones(na), size=ns)
            for ns, na in zip(mdp.local_state_sizes, mdp.local_action_sizes))))
    return out


def verify_bounds(mdp: FactoredMdp, kernel: SeparableKernel,
                  start_dist: np.ndarray | None = None, seed: int = 0,
                  extra_policies: int = 2) -> BoundReport:
    """Check the separable-approximation inequalities with exact solvers.

    kernel supplies the dependence-level witness; its max-TV gap is an
    upper bound on E, which only loosens every right-hand side.  The
    per-agent projected-fixed-point checks compare entries on local
    cells with positive stationary mass under the uniform behavior
    policy, the scope on which the fixed point (and the learner's
    estimate) is defined.
    """
    e_ub = max_tv_gap(mdp, kernel)
    gamma = mdp.gamma
    sep = build_separable_mdp(mdp, kernel)
    bound_joint = 2.0 * mdp.n * gamma * e_ub / (1.0 - gamma) ** 2
    bound_local = 2.0 * gamma * e_ub / (1.0 - gamma) ** 2
    checks: list[BoundCheck] = []

    q_star = solvers.value_iteration(mdp)
    q_star_sep = solvers.value_iteration(sep)
    checks.append(BoundCheck("optimal_q_gap", float(np.abs(q_star - q_star_sep).max()), bound_joint))
    checks.append(BoundCheck("q_boundedness", float(np.abs(q_star).max()),
                             mdp.n / (1.0 - gamma) + 1e-9))

    policies = _random_factored_policies(mdp, extra_policies, seed)
    for idx, fp in enumerate(policies):
        pi = joint_policy_of(fp, mdp.local_state_sizes, mdp.local_action_sizes)
        gap = float(np.abs(solvers.policy_q(mdp, pi) - solvers.policy_q(sep, pi)).max())
        checks.append(BoundCheck(f"policy_q_gap[pi{idx}]", gap, bound_joint))

    uniform = policies[0]
    pi_u = joint_policy_of(uniform, mdp.local_state_sizes, mdp.local_action_sizes)
    sd = solvers.stationary_on_recurrent(mdp, pi_u, start_dist)
    s_locals = mdp.state_local_table()
    a_locals = mdp.action_local_table()
    for i in range(mdp.n):
        ns, na = mdp.local_state_sizes[i], mdp.local_action_sizes[i]
        mass = np.zeros((ns, na))
        for s in range(mdp.num_states):
            for a in range(mdp.num_actions):
                mass[s_locals[s][i], a_locals[a][i]] += sd.d[s, a]
        live = mass > 0
        q_tilde_star = solvers.aggregated_fixed_point(mdp, i, sd.d, "optimality",
                                                      allow_zero_cells=True)
        q_hat_star = _local_value_iteration(kernel.matrices[i], np.asarray(mdp.rewards[i]), gamma)
        checks.append(BoundCheck(f"aggregated_optimality_gap[agent{i}]",
                                 float(np.abs((q_tilde_star - q_hat_star)[live]).max()),
                                 bound_local))
        q_tilde = solvers.aggregated_fixed_point(mdp, i, sd.d, "evaluation", pi=pi_u,
                                                 allow_zero_cells=True)
        q_hat_pi = _exact_local_q(kernel.matrices[i], np.asarray(mdp.rewards[i]), gamma,
                                  np.asarray(uniform.tables[i]))
        checks.append(BoundCheck(f"aggregated_evaluation_gap[agent{i}]",
                                 float(np.abs((q_tilde - q_hat_pi)[live]).max()),
                                 bound_local))
        # nonexpansiveness of Phi Pi on a random table
        rng = stream(seed, 0xF2, i)
        q_rand = rng.normal(size=(mdp.num_states, mdp.num_actions))
        cell = np.zeros((ns, na))
        for s in range(mdp.num_states):
            for a in range(mdp.num_actions):
                cell[s_locals[s][i], a_locals[a][i]] += sd.d[s, a] * q_rand[s, a]
        proj = np.where(live, cell / np.where(live, mass, 1.0), 0.0)
        checks.append(BoundCheck(f"aggregation_nonexpansive[agent{i}]",
                                 float(np.abs(proj).max()), float(np.abs(q_rand).max())))
    return BoundReport(dependence_upper=float(e_ub), checks=tuple(checks))
