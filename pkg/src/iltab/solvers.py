"""Exact dynamic-programming oracles.

Value iteration, policy evaluation, stationary distributions and mixing
diagnostics of the policy-induced chain on S x A, and the projected
(state-aggregated) Bellman fixed points that independent learners
actually converge to.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse.csgraph as csgraph

from iltab.errors import Periodic, ReducibleChain, SolverError, ZeroCellMass
from iltab.mdp import FactoredMdp, JointPolicy, reward_vector

MAX_ITER = 10**6
DEFAULT_TOL = 1e-10


def _stop_threshold(tol: float, gamma: float) -> float:
    # sup-norm successive difference <= tol*(1-gamma)/(2*gamma) guarantees
    # distance to the fixed point <= tol for a gamma-contraction
    return tol * (1.0 - gamma) / (2.0 * gamma)


def value_iteration(mdp: FactoredMdp, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Optimal Q-function, indexed [s][a]."""
    r = reward_vector(mdp)
    p = mdp.transition  # [a][s][s']
    q = np.zeros((mdp.num_states, mdp.num_actions))
    thresh = _stop_threshold(tol, mdp.gamma)
    for _ in range(MAX_ITER):
        v = q.max(axis=1)
        q_next = r + mdp.gamma * np.einsum("ast,t->sa", p, v)
        diff = np.abs(q_next - q).max()
        q = q_next
        if diff <= thresh:
            return q
    raise SolverError("value iteration exceeded iteration cap")


def greedy_policy(q: np.ndarray) -> JointPolicy:
    """Deterministic argmax policy; ties broken by lowest action index."""
    table = np.zeros_like(q)
    table[np.arange(q.shape[0]), q.argmax(axis=1)] = 1.0
    return JointPolicy(table)


def policy_state_matrix(mdp: FactoredMdp, pi: JointPolicy) -> np.ndarray:
    """State chain M(s, s') = sum_a pi(a|s) P_a(s, s')."""
    return np.einsum("sa,ast->st", pi.table, mdp.transition)


def policy_sa_matrix(mdp: FactoredMdp, pi: JointPolicy) -> np.ndarray:
    """Chain on S x A pairs, row-major (s, a) ordering."""
    num_s, num_a = mdp.num_states, mdp.num_actions
    t = np.einsum("ast,tb->satb", mdp.transition, pi.table)
    return t.reshape(num_s * num_a, num_s * num_a)


def policy_q(mdp: FactoredMdp, pi: JointPolicy, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Q_pi by direct linear solve, falling back to fixed-point iteration."""
    r = reward_vector(mdp)
    p = mdp.transition
    m = policy_state_matrix(mdp, pi)
    b = np.einsum("sa,sa->s", pi.table, r)
    try:
        v = np.linalg.solve(np.eye(mdp.num_states) - mdp.gamma * m, b)
        return r + mdp.gamma * np.einsum("ast,t->sa", p, v)
    except np.linalg.LinAlgError:
        pass
    q = np.zeros_like(r)
    thresh = _stop_threshold(tol, mdp.gamma)
    for _ in range(MAX_ITER):
        v = np.einsum("sa,sa->s", pi.table, q)
        q_next = r + mdp.gamma * np.einsum("ast,t->sa", p, v)
        diff = np.abs(q_next - q).max()
        q = q_next
        if diff <= thresh:
            return q
    raise SolverError("policy evaluation exceeded iteration cap")


def _chain_period(m: np.ndarray) -> int:
    """gcd of cycle lengths via BFS layering (chain assumed irreducible)."""
    n = m.shape[0]
    level = np.full(n, -1)
    level[0] = 0
    frontier = [0]
    g = 0
    adj = [np.flatnonzero(m[s] > 0) for s in range(n)]
    while frontier:
        nxt = []
        for s in frontier:
            for t in adj[s]:
                if level[t] < 0:
                    level[t] = level[s] + 1
                    nxt.append(t)
                else:
                    g = math.gcd(g, level[s] + 1 - level[t])
        frontier = nxt
    return abs(g) if g else 0


def closed_classes(m: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """Closed communicating classes and the SCC label per state."""
    n_comp, labels = csgraph.connected_components(m > 0, directed=True, connection="strong")
    closed = []
    for c in range(n_comp):
        members = np.flatnonzero(labels == c)
        mass_out = m[np.ix_(members, np.setdiff1d(np.arange(m.shape[0]), members))].sum()
        if mass_out == 0.0:
            closed.append(members)
    return closed, labels


def _stationary_of_irreducible(m: np.ndarray) -> np.ndarray:
    """Stationary row vector of an irreducible chain by direct solve."""
    n = m.shape[0]
    a = np.vstack([m.T - np.eye(n), np.ones((1, n))])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    d, *_ = np.linalg.lstsq(a, b, rcond=None)
    d = np.maximum(d, 0.0)
    return d / d.sum()


@dataclass(frozen=True)
class StationaryDist:
    """Stationary distribution over S x A with its minimum masses."""

    d: np.ndarray  # indexed [s][a]
    sigma: float  # min over (s, a)
    sigma_prime: float  # min over agents of the local-marginal minimum


def _sa_marginal_minima(mdp: FactoredMdp, d: np.ndarray) -> float:
    s_locals = mdp.state_local_table()
    a_locals = mdp.action_local_table()
    worst = np.inf
    for i in range(mdp.n):
        marg = np.zeros((mdp.local_state_sizes[i], mdp.local_action_sizes[i]))
        for s in range(mdp.num_states):
            for a in range(mdp.num_actions):
                marg[s_locals[s][i], a_locals[a][i]] += d[s, a]
        worst = min(worst, marg.min())
    return float(worst)


def stationary_distribution(mdp: FactoredMdp, pi: JointPolicy, tol: float = DEFAULT_TOL,
                            require_aperiodic: bool = True) -> StationaryDist:
    """Stationary distribution of the S x A chain via power iteration."""
    t = policy_sa_matrix(mdp, pi)
    closed, labels = closed_classes(t)
    if len(closed) != 1 or len(closed[0]) != t.shape[0]:
        raise ReducibleChain("chain under pi is not a single closed communicating class")
    period = _chain_period(t)
    if require_aperiodic and period != 1:
        raise Periodic(f"chain under pi has period {period}")
    if period == 1:
        n = t.shape[0]
        d = np.full(n, 1.0 / n)
        for _ in range(MAX_ITER):
            d_next = d @ t
            if np.abs(d_next - d_next @ t).sum() <= tol:
                d = d_next
                break
            d = d_next
        else:
            raise SolverError("stationary power iteration exceeded iteration cap")
    else:
        # periodic irreducible chains still have a unique stationary d,
        # just not as a limit of powers; solve directly
        d = _stationary_of_irreducible(t)
    d = (d / d.sum()).reshape(mdp.num_states, mdp.num_actions)
    return StationaryDist(d=d, sigma=float(d.min()), sigma_prime=_sa_marginal_minima(mdp, d))


def stationary_on_recurrent(mdp: FactoredMdp, pi: JointPolicy,
                            start_dist: np.ndarray | None = None) -> StationaryDist:
    """Stationary distribution supported on the recurrent class.

    Unlike stationary_distribution, the chain may have transient states:
    the distribution of the unique closed class reachable from the start
    support is embedded in the full S x A vector (zeros elsewhere).
    sigma is reported over the support; local-marginal cells off the
    support get zero mass, so sigma_prime can legitimately be 0 when a
    local state never recurs.
    """
    t = policy_sa_matrix(mdp, pi)
    n_sa = t.shape[0]
    num_a = mdp.num_actions
    if start_dist is None:
        seed_states = np.arange(n_sa)
    else:
        states = np.flatnonzero(np.asarray(start_dist) > 0)
        seed_states = np.array([s * num_a + a for s in states
                                for a in np.flatnonzero(pi.table[s] > 0)])
    reach = np.zeros(n_sa, dtype=bool)
    frontier = list(seed_states)
    reach[seed_states] = True
    while frontier:
        nxt = np.flatnonzero(t[frontier].sum(axis=0) > 0)
        frontier = [x for x in nxt if not reach[x]]
        reach[frontier] = True
    closed, _ = closed_classes(t)
    hit = [members for members in closed if reach[members].any()]
    if len(hit) != 1:
        raise ReducibleChain(f"{len(hit)} closed classes reachable from the start distribution")
    members = hit[0]
    d_full = np.zeros(n_sa)
    d_full[members] = _stationary_of_irreducible(t[np.ix_(members, members)])
    d = d_full.reshape(mdp.num_states, num_a)
    sigma = float(d_full[members].min())
    return StationaryDist(d=d, sigma=sigma, sigma_prime=_sa_marginal_minima(mdp, d))


def average_reward(mdp: FactoredMdp, pi: JointPolicy, start_dist: np.ndarray | None = None) -> float:
    """Long-run average reward from a start distribution over states.

    Handles reducible and periodic chains: each closed class gets its
    stationary average, transient states get the harmonic extension
    (expected class average at absorption).
    """
    m = policy_state_matrix(mdp, pi)
    r = reward_vector(mdp)
    r_pi = np.einsum("sa,sa->s", pi.table, r)
    closed, labels = closed_classes(m)
    if not closed:
        raise ReducibleChain("no closed communicating class")
    n = m.shape[0]
    g = np.full(n, np.nan)
    for members in closed:
        sub = m[np.ix_(members, members)]
        d = _stationary_of_irreducible(sub)
        g[members] = float(d @ r_pi[members])
    transient = np.flatnonzero(np.isnan(g))
    if transient.size:
        fixed = np.flatnonzero(~np.isnan(g))
        a = np.eye(transient.size) - m[np.ix_(transient, transient)]
        b = m[np.ix_(transient, fixed)] @ g[fixed]
        g[transient] = np.linalg.solve(a, b)
    if start_dist is None:
        start_dist = np.full(n, 1.0 / n)
    return float(start_dist @ g)


def aggregated_fixed_point(mdp: FactoredMdp, agent: int, d: np.ndarray, kind: str,
                           pi: JointPolicy | None = None, tol: float = DEFAULT_TOL,
                           allow_zero_cells: bool = False) -> np.ndarray:
    """Fixed point of x -> Pi F^i(Phi^i x) on agent i's local table.

    Pi is the d-weighted average over each local (s^i, a^i) cell; F^i is
    the max-form Bellman operator for kind="optimality" (IQL target) or
    the expected-next-action form for kind="evaluation" (ITD target,
    needs pi).

    allow_zero_cells freezes zero-mass cells at 0 instead of raising:
    a learner whose trajectory lives on the support of d never updates
    those entries either, so 0 is the value it holds there forever.
    The support of a stationary d is closed, so frozen cells never feed
    back into supported ones through next-state values.
    """
    if kind == "evaluation" and pi is None:
        raise ValueError("evaluation kind needs a policy")
    num_s, num_a = mdp.num_states, mdp.num_actions
    ns_i, na_i = mdp.local_state_sizes[agent], mdp.local_action_sizes[agent]
    s_loc = np.array([t[agent] for t in mdp.state_local_table()])
    a_loc = np.array([t[agent] for t in mdp.action_local_table()])
    cell = s_loc[:, None] * na_i + a_loc[None, :]  # [s][a] -> flat local cell
    w = np.asarray(d, dtype=float).reshape(num_s, num_a).copy()
    cell_mass = np.bincount(cell.ravel(), weights=w.ravel(), minlength=ns_i * na_i)
    if np.any(cell_mass <= 0.0) and not allow_zero_cells:
        bad = int(np.argmin(cell_mass))
        raise ZeroCellMass(f"zero stationary mass on local cell (s^i={bad // na_i}, a^i={bad % na_i})")
    live = cell_mass > 0.0
    cell_mass = np.where(live, cell_mass, 1.0)  # frozen cells divide by 1, stay 0
    ri = mdp.rewards[agent][s_loc[:, None], a_loc[None, :]]  # lifted R^i, [s][a]
    p = mdp.transition
    x = np.zeros(ns_i * na_i)
    thresh = _stop_threshold(tol, mdp.gamma)
    for _ in range(MAX_ITER):
        q_lift = x[cell]  # Phi x, [s][a]
        if kind == "optimality":
            v = q_lift.max(axis=1)
        else:
            v = np.einsum("sa,sa->s", pi.table, q_lift)
        y = ri + mdp.gamma * np.einsum("ast,t->sa", p, v)
        x_next = np.bincount(cell.ravel(), weights=(w * y).ravel(), minlength=ns_i * na_i) / cell_mass
        x_next[~live] = 0.0
        diff = np.abs(x_next - x).max()
        x = x_next
        if diff <= thresh:
            return x.reshape(ns_i, na_i)
    raise SolverError("aggregated fixed point exceeded iteration cap")


@dataclass(frozen=True)
class MixingProfile:
    """Fitted exponential-decay mixing constants of the S x A chain."""

    M1_hat: float
    M2_hat: float
    sigma: float
    sigma_prime: float
    decay_curve: list[tuple[int, float]]


def mixing_profile(mdp: FactoredMdp, pi: JointPolicy, horizon: int,
                   start_dist: np.ndarray | None = None) -> MixingProfile:
    """Worst-case TV gap to stationarity for k = 0..horizon, with a
    log-linear least-squares fit over the tail half of the curve.

    Chains with transient states are handled by restricting the max to
    rows inside the recurrent class reachable from the start support.
    """
    t = policy_sa_matrix(mdp, pi)
    try:
        sd = stationary_distribution(mdp, pi)
        rows = np.arange(t.shape[0])
    except ReducibleChain:
        sd = stationary_on_recurrent(mdp, pi, start_dist)
        rows = np.flatnonzero(sd.d.ravel() > 0)
    d = sd.d.ravel()
    power = np.eye(t.shape[0])
    curve = []
    for k in range(horizon + 1):
        gap = 0.5 * np.abs(power[rows] - d[None, :]).sum(axis=1).max()
        curve.append((k, float(gap)))
        power = power @ t
    # fit only the geometric regime; below ~1e-9 the curve is dominated
    # by round-off and its slope says nothing about the mixing time
    tail = [(k, g) for k, g in curve[(horizon + 1) // 2:] if g > 1e-9]
    if len(tail) >= 2:
        ks = np.array([k for k, _ in tail], dtype=float)
        logs = np.log([g for _, g in tail])
        slope, intercept = np.polyfit(ks, logs, 1)
        m1 = float(np.exp(intercept))
        m2 = float(-1.0 / slope) if slope < 0 else float(horizon)
    else:
        m1, m2 = 0.0, 1.0
    return MixingProfile(M1_hat=max(m1, 0.0), M2_hat=min(max(m2, 1.0), float(horizon)),
                         sigma=sd.sigma, sigma_prime=sd.sigma_prime, decay_curve=curve)
