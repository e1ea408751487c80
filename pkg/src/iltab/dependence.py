"""Dependence-level estimation over separable transition kernels.

The dependence level of a factored MDP is the minimum over separable
kernels {Phat_{a^i}} of the worst-case total-variation distance between
the true joint row P_a(s, .) and the product row prod_i Phat_{a^i}(s^i, .).
The min-max problem is nonconvex in the product parameterization, so the
optimizer reports an upper bound with the achieving kernel, and a
certified bracket is available only on tiny instances via brute force.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import reduce

import numpy as np

from iltab.errors import DimensionMismatch, NotADistribution, TooLarge
from iltab.mdp import ROW_SUM_TOL, FactoredMdp
from iltab.rng import stream


def tv_distance(p: np.ndarray, q: np.ndarray) -> float:
    """Total variation distance (1/2) sum |p_j - q_j|."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise DimensionMismatch(f"supports {p.shape} vs {q.shape}")
    for v in (p, q):
        if abs(v.sum() - 1.0) > 1e-10 or np.any(v < 0):
            raise NotADistribution(f"vector sums to {v.sum()!r}")
    return float(0.5 * np.abs(p - q).sum())


@dataclass(frozen=True)
class SeparableKernel:
    """Per agent i and local action a^i, a |S^i| x |S^i| stochastic matrix.

    matrices[i] has shape (|A^i|, |S^i|, |S^i|), indexed [a^i][s^i][s'^i].
    """

    matrices: tuple[np.ndarray, ...]

    def __post_init__(self):
        object.__setattr__(self, "matrices", tuple(np.asarray(m, dtype=float) for m in self.matrices))

    def copy_mutable(self) -> list[np.ndarray]:
        return [m.copy() for m in self.matrices]


def uniform_kernel(mdp: FactoredMdp) -> SeparableKernel:
    return SeparableKernel(tuple(
        np.full((na, ns, ns), 1.0 / ns)
        for ns, na in zip(mdp.local_state_sizes, mdp.local_action_sizes)))


def marginal_kernel(mdp: FactoredMdp) -> SeparableKernel:
    """Row-wise marginalization start: for each agent, average the
    conditional local next-state distribution over the other agents'
    coordinates with uniform weights.  Exact on separable inputs."""
    s_locals = mdp.state_local_table()
    a_locals = mdp.action_local_table()
    mats = []
    for i in range(mdp.n):
        ns, na = mdp.local_state_sizes[i], mdp.local_action_sizes[i]
        acc = np.zeros((na, ns, ns))
        count = np.zeros((na, ns))
        for a in range(mdp.num_actions):
            ai = a_locals[a][i]
            for s in range(mdp.num_states):
                si = s_locals[s][i]
                row = mdp.transition[a, s]
                local = np.zeros(ns)
                for sp in range(mdp.num_states):
                    local[s_locals[sp][i]] += row[sp]
                acc[ai, si] += local
                count[ai, si] += 1.0
        mats.append(acc / count[:, :, None])
    return SeparableKernel(tuple(mats))


def random_kernel(mdp: FactoredMdp, rng: np.random.Generator) -> SeparableKernel:
    return SeparableKernel(tuple(
        rng.dirichlet(np.ones(ns), size=(na, ns))
        for ns, na in zip(mdp.local_state_sizes, mdp.local_action_sizes)))


def _check_shapes(mdp: FactoredMdp, kernel: SeparableKernel) -> None:
    if len(kernel.matrices) != mdp.n:
        raise DimensionMismatch(f"kernel has {len(kernel.matrices)} agents, mdp has {mdp.n}")
    for i, m in enumerate(kernel.matrices):
        expect = (mdp.local_action_sizes[i], mdp.local_state_sizes[i], mdp.local_state_sizes[i])
        if m.shape != expect:
            raise DimensionMismatch(f"agent {i} kernel shape {m.shape} != {expect}")


def _product_row(mats, s_loc, a_loc) -> np.ndarray:
    rows = [mats[i][a_loc[i], s_loc[i]] for i in range(len(mats))]
    return reduce(np.kron, rows)


class _GapEngine:
    """Vectorized max-TV objective and row subgradients for one MDP."""

    def __init__(self, mdp: FactoredMdp):
        self.mdp = mdp
        self.s_loc = np.array(mdp.state_local_table())  # (S, n)
        self.a_loc = np.array(mdp.action_local_table())  # (A, n)

    def lookups(self, mats) -> list[np.ndarray]:
        # per agent, the kernel row used by every joint (a, s): (A, S, ns_i)
        return [mats[i][self.a_loc[:, i]][:, self.s_loc[:, i], :] for i in range(self.mdp.n)]

    def products(self, mats):
        lks = self.lookups(mats)
        num_a, num_s = self.mdp.num_actions, self.mdp.num_states
        pre = [np.ones((num_a, num_s, 1))]
        for lk in lks:
            pre.append((pre[-1][:, :, :, None] * lk[:, :, None, :]).reshape(num_a, num_s, -1))
        suf = [np.ones((num_a, num_s, 1))]
        for lk in reversed(lks):
            suf.append((lk[:, :, :, None] * suf[-1][:, :, None, :]).reshape(num_a, num_s, -1))
        suf.reverse()
        return pre, suf  # pre[i] over agents < i; suf[i+1] over agents > i; pre[n] = full

    def gaps(self, mats) -> np.ndarray:
        full = self.products(mats)[0][-1]
        return 0.5 * np.abs(self.mdp.transition - full).sum(axis=2)

    def subgrad(self, mats, agent: int):
        """(objective, gradient array (na_i, ns_i, ns_i)) averaging the
        gradients of all joint rows within 1e-9 of the max; any convex
        combination of active-piece gradients is a valid subgradient."""
        mdp = self.mdp
        pre, suf = self.products(mats)
        full = pre[-1]
        gaps = 0.5 * np.abs(mdp.transition - full).sum(axis=2)
        best = float(gaps.max())
        act_a, act_s = np.nonzero(gaps >= best - 1e-9)
        ns = mdp.local_state_sizes[agent]
        left = pre[agent][act_a, act_s]  # (m, L)
        right = suf[agent + 1][act_a, act_s]  # (m, R)
        z = np.sign(full[act_a, act_s] - mdp.transition[act_a, act_s])
        zr = z.reshape(len(act_a), left.shape[1], ns, right.shape[1])
        g = 0.5 * np.einsum("ml,mlvr,mr->mv", left, zr, right)
        acc = np.zeros((mdp.local_action_sizes[agent], ns, ns))
        cnt = np.zeros((mdp.local_action_sizes[agent], ns))
        ai = self.a_loc[act_a, agent]
        si = self.s_loc[act_s, agent]
        np.add.at(acc, (ai, si), g)
        np.add.at(cnt, (ai, si), 1.0)
        nz = cnt > 0
        acc[nz] /= cnt[nz][:, None]
        return best, acc, nz


def _all_gaps(mdp: FactoredMdp, mats) -> np.ndarray:
    """TV gap for every (s, a), returned as array [a][s]."""
    return _GapEngine(mdp).gaps(mats)


def max_tv_gap(mdp: FactoredMdp, kernel: SeparableKernel) -> float:
    """Exact max over (s, a) of TV(true row, product-kernel row)."""
    _check_shapes(mdp, kernel)
    return float(_all_gaps(mdp, kernel.matrices).max())


@dataclass(frozen=True)
class DependenceEstimate:
    value: float
    kernel: SeparableKernel
    certified_lower: float | None = None
    method: str = "coordinate-descent"


@dataclass
class OptimizeConfig:
    starts: int = 3  # random starts beyond uniform + marginalization
    passes: int = 5
    iters_per_coordinate: int = 500
    step_scale: float = 0.5
    seed: int = 0
    extra_starts: list = field(default_factory=list)  # candidate SeparableKernels


def _project_simplex(v: np.ndarray) -> np.ndarray:
    # Euclidean projection onto the probability simplex
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    rho = np.nonzero(u * np.arange(1, len(v) + 1) > css)[0][-1]
    return np.maximum(v - css[rho] / (rho + 1.0), 0.0)


def _project_simplex_rows(rows: np.ndarray) -> np.ndarray:
    """Euclidean simplex projection applied to the last axis."""
    shape = rows.shape
    flat = rows.reshape(-1, shape[-1])
    out = np.array([_project_simplex(r) for r in flat])
    return out.reshape(shape)


def optimize_dependence(mdp: FactoredMdp, config: OptimizeConfig | None = None) -> DependenceEstimate:
    """Multi-start coordinate descent upper bound on the dependence level.

    Cycles over agents; each agent's kernel rows are updated by projected
    subgradient steps on the simplex with the other agents frozen.  The
    returned value is the best max_tv_gap seen across all starts, so it
    never exceeds the gap of any supplied candidate kernel.
    """
    cfg = config or OptimizeConfig()
    rng = stream(cfg.seed, 0xD4)
    engine = _GapEngine(mdp)
    starts = [uniform_kernel(mdp), marginal_kernel(mdp)]
    starts.extend(cfg.extra_starts)
    starts.extend(random_kernel(mdp, rng) for _ in range(cfg.starts))
    best_val = np.inf
    best_mats = None
    for start in starts:
        _check_shapes(mdp, start)
        mats = start.copy_mutable()
        val = float(engine.gaps(mats).max())
        if val < best_val:
            best_val, best_mats = val, [m.copy() for m in mats]
        for _ in range(cfg.passes):
            pass_start_best = best_val
            for agent in range(mdp.n):
                for t in range(1, cfg.iters_per_coordinate + 1):
                    val, grad, touched = engine.subgrad(mats, agent)
                    if val < best_val:
                        best_val, best_mats = val, [m.copy() for m in mats]
                    if val <= 1e-12:
                        break
                    step = cfg.step_scale / np.sqrt(t)
                    mats[agent][touched] = _project_simplex_rows(mats[agent][touched] - step * grad[touched])
            if pass_start_best - best_val <= 1e-10:
                break  # a full pass made no progress on this start
        val = float(engine.gaps(mats).max())
        if val < best_val:
            best_val, best_mats = val, [m.copy() for m in mats]
    return DependenceEstimate(value=float(best_val),
                              kernel=SeparableKernel(tuple(best_mats)),
                              method="coordinate-descent")


def _simplex_grid(dim: int, resolution: int) -> np.ndarray:
    pts = []
    for comp in itertools.combinations_with_replacement(range(dim), resolution):
        row = np.zeros(dim)
        for c in comp:
            row[c] += 1.0 / resolution
        pts.append(row)
    return np.array(pts)


def brute_force_dependence(mdp: FactoredMdp, resolution: int = 32) -> tuple[float, float]:
    """Certified (lower, upper) bracket of the dependence level by grid
    enumeration over all kernel rows.

    Bracket derivation: each joint row's TV gap involves exactly one row
    per agent, and |TV(P, q_1 x ... x q_n) - TV(P, q'_1 x ... x q'_n)|
    <= sum_i (1/2)||q_i - q'_i||_1 (TV of product measures is subadditive
    in the factors).  Any simplex point of dimension d is within L1
    distance d/resolution of a grid point, so the grid minimum (upper)
    overshoots the true minimum by at most sum_i |S^i| / (2 resolution).
    """
    n_params = sum(na * ns * (ns - 1)
                   for ns, na in zip(mdp.local_state_sizes, mdp.local_action_sizes))
    if n_params > 12:
        raise TooLarge(f"{n_params} kernel parameters exceed the brute-force cap of 12")
    row_keys = []  # (agent, a^i, s^i) in a fixed order
    row_index = {}
    for i in range(mdp.n):
        for ai in range(mdp.local_action_sizes[i]):
            for si in range(mdp.local_state_sizes[i]):
                row_index[(i, ai, si)] = len(row_keys)
                row_keys.append((i, ai, si))
    grids = [_simplex_grid(mdp.local_state_sizes[i], resolution) for i, _, _ in row_keys]
    combos = 1.0
    for g in grids:
        combos *= g.shape[0]
    if combos > 5e7:
        raise TooLarge(f"{combos:.2e} grid combinations exceed the enumeration budget; "
                       "lower the resolution or shrink the model")
    s_locals = mdp.state_local_table()
    a_locals = mdp.action_local_table()
    # TV gap of each joint row depends only on the n kernel rows it uses;
    # tabulate it over their grid choices, then take the max over joint
    # rows by broadcasting into the full choice space
    tables: dict[tuple[int, ...], np.ndarray] = {}
    for a in range(mdp.num_actions):
        for s in range(mdp.num_states):
            involved = tuple(row_index[(i, a_locals[a][i], s_locals[s][i])] for i in range(mdp.n))
            prod = grids[involved[0]]
            for r in involved[1:]:
                g = grids[r]
                prod = np.einsum("...D,kd->...kDd", prod, g).reshape(
                    prod.shape[:-1] + (g.shape[0], prod.shape[-1] * g.shape[1]))
            tv = 0.5 * np.abs(prod - mdp.transition[a, s]).sum(axis=-1)
            if involved in tables:
                tables[involved] = np.maximum(tables[involved], tv)
            else:
                tables[involved] = tv
    n_rows = len(row_keys)
    sizes = [g.shape[0] for g in grids]
    objective = np.zeros(tuple(sizes))
    for involved, tv in tables.items():
        shape = [1] * n_rows
        for pos, r in enumerate(involved):
            shape[r] = sizes[r]
        # involved rows are distinct (one per agent), in agent order
        np.maximum(objective, tv.reshape(shape), out=objective)
    upper = float(objective.min())
    slack = sum(ns / (2.0 * resolution) for ns in mdp.local_state_sizes)
    return max(upper - slack, 0.0), upper


def build_separable_mdp(mdp: FactoredMdp, kernel: SeparableKernel) -> FactoredMdp:
    """The separable MDP: same S, A, R, gamma with product-kernel rows."""
    _check_shapes(mdp, kernel)
    s_locals = mdp.state_local_table()
    a_locals = mdp.action_local_table()
    p = np.zeros_like(mdp.transition)
    for a in range(mdp.num_actions):
        for s in range(mdp.num_states):
            p[a, s] = _product_row(kernel.matrices, s_locals[s], a_locals[a])
    # product of rows each summing to 1 within tolerance can drift; snap
    p = p / p.sum(axis=2, keepdims=True)
    return FactoredMdp(n=mdp.n, local_state_sizes=mdp.local_state_sizes,
                       local_action_sizes=mdp.local_action_sizes,
                       transition=p, rewards=mdp.rewards, gamma=mdp.gamma)
