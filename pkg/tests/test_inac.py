import math

import numpy as np
import pytest

from iltab import envs, solvers
from iltab.errors import NonFinite
from iltab.inac import (ETA_GREEDY_THRESHOLD, LOG_ZERO, InacConfig, eta_schedule, inac_run,
                        inpg_step, itd_run, npg_equivalence_check, softmax_policy)
from iltab.mdp import FactoredPolicy, joint_policy_of
from iltab.records import RunRecord
from iltab.rng import stream


def test_softmax_hand_values():
    th = [np.array([[0.0, 0.0], [math.log(3.0), 0.0]])]
    fp = softmax_policy(th)
    assert fp.tables[0][0] == pytest.approx([0.5, 0.5])
    assert fp.tables[0][1] == pytest.approx([0.75, 0.25])


def test_softmax_overflow_safe():
    th = [np.array([[1000.0, 0.0]])]
    fp = softmax_policy(th)
    assert fp.tables[0][0, 0] == pytest.approx(1.0)


def test_softmax_rejects_nan():
    with pytest.raises(NonFinite):
        softmax_policy([np.array([[np.nan, 0.0]])])


def test_eta_schedule_initial_value():
    assert eta_schedule(0, 0.9, 8, 3, []) == pytest.approx(0.9 * math.log(8))
    assert eta_schedule(0, 0.9, 8, 3, [], eta0=0.2) == 0.2


def test_eta_schedule_plain_growth_hand_values():
    gamma = 0.99
    etas = [0.2]
    e1 = eta_schedule(1, gamma, 8, 3, etas, growth="plain")
    assert e1 == pytest.approx(0.2 / gamma)
    etas.append(e1)
    e2 = eta_schedule(2, gamma, 8, 3, etas, growth="plain")
    assert e2 == pytest.approx((0.2 + e1) / gamma ** 3)


def test_eta_schedule_theorem_growth_hand_value():
    gamma = 0.8
    n, num_a = 2, 4
    history = [gamma * math.log(num_a)]
    e1 = eta_schedule(1, gamma, num_a, n, history)
    expect = 2 * n * math.log(num_a) * history[0] / ((1 - gamma) * gamma)
    assert e1 == pytest.approx(expect)


def test_eta_schedule_overflow_to_inf():
    history = [1e300, 1e308]
    assert eta_schedule(2, 0.5, 4, 2, history, growth="theorem") == math.inf
    assert eta_schedule(3, 0.5, 4, 2, [math.inf, 1.0, 1.0], growth="plain") == math.inf


def test_eta_schedule_history_length_guard():
    with pytest.raises(ValueError):
        eta_schedule(2, 0.9, 4, 2, [0.1])


def test_inpg_raw_matches_policy_space():
    theta = [np.array([[0.1, -0.3], [0.0, 0.5]])]
    qs = [np.array([[1.0, 2.0], [0.3, 0.1]])]
    raw = inpg_step(theta, 0.7, qs, mode="raw")
    ps_theta = [np.log(softmax_policy(theta).tables[0])]
    ps = inpg_step(ps_theta, 0.7, qs, mode="policy-space")
    assert np.allclose(softmax_policy(raw).tables[0], np.exp(ps[0]), atol=1e-12)


def test_inpg_policy_space_stays_normalized():
    theta = [np.full((2, 3), -math.log(3.0))]
    qs = [np.array([[5.0, 1.0, 0.0], [0.0, 0.0, 9.0]])]
    out = inpg_step(theta, 2.0, qs, mode="policy-space")
    assert np.allclose(np.exp(out[0]).sum(axis=1), 1.0, atol=1e-12)


def test_inpg_raw_overflow_raises():
    theta = [np.array([[0.0, 0.0]])]
    qs = [np.array([[1e308, 0.0]])]
    with pytest.raises(NonFinite):
        inpg_step(theta, 10.0, qs, mode="raw")


def test_inpg_infinite_eta_is_greedy():
    theta = [np.array([[-0.1, -2.0], [-1.0, -0.2]])]
    qs = [np.array([[0.2, 0.9], [0.4, 0.1]])]
    out = inpg_step(theta, math.inf, qs, mode="policy-space")
    assert out[0][0, 1] == 0.0 and out[0][0, 0] == LOG_ZERO
    assert out[0][1, 0] == 0.0 and out[0][1, 1] == LOG_ZERO
    out2 = inpg_step(theta, ETA_GREEDY_THRESHOLD * 10, qs, mode="policy-space")
    assert np.array_equal(out[0], out2[0])


def test_npg_equivalence_fuzz():
    rng = stream(77, 3)
    worst = 0.0
    for trial in range(100):
        n = 2 + trial % 2
        ns = [int(rng.integers(1, 4)) for _ in range(n)]
        na = [int(rng.integers(2, 4)) for _ in range(n)]
        theta = [rng.normal(0, 2, size=(s, a)) for s, a in zip(ns, na)]
        qs = [rng.normal(0, 3, size=(s, a)) for s, a in zip(ns, na)]
        eta = float(rng.uniform(0.01, 5.0))
        worst = max(worst, npg_equivalence_check(theta, eta, qs, tuple(ns), tuple(na)))
    assert worst <= 1e-9


def test_itd_converges_to_policy_q():
    spec = envs.RandomMdpSpec(n=1, state_sizes=(3,), action_sizes=(2,),
                              coupling=0.0, seed=40, gamma=0.8)
    m, _ = envs.random_factored_mdp_with_witness(spec)
    tables = (np.array([[0.6, 0.4], [0.3, 0.7], [0.5, 0.5]]),)
    fp = FactoredPolicy(tables)
    pi = joint_policy_of(fp, (3,), (2,))
    target = solvers.policy_q(m, pi)
    qs = itd_run(m, fp, K=200000, alpha=20.0, k0=100.0, seed=0)
    assert np.abs(qs[0] - target).max() < 0.05


def test_itd_deterministic(small_mdp):
    fp = FactoredPolicy.uniform((2, 2), (2, 2))
    a = itd_run(small_mdp, fp, K=500, alpha=1.0, k0=10.0, seed=5)
    b = itd_run(small_mdp, fp, K=500, alpha=1.0, k0=10.0, seed=5)
    for q1, q2 in zip(a, b):
        assert np.array_equal(q1, q2)


def test_itd_records_error_metric(small_mdp):
    fp = FactoredPolicy.uniform((2, 2), (2, 2))
    pi = joint_policy_of(fp, (2, 2), (2, 2))
    sd = solvers.stationary_distribution(small_mdp, pi)
    targets = [solvers.aggregated_fixed_point(small_mdp, i, sd.d, "evaluation", pi=pi)
               for i in range(2)]
    rec = RunRecord(seed=0)
    itd_run(small_mdp, fp, K=1000, alpha=2.0, k0=10.0, seed=0,
            eval_stride=500, record=rec, targets=targets)
    steps = sorted({e[0] for e in rec.events})
    assert steps == [500, 1000]
    assert all(e[2] == "itd_err_sup" for e in rec.events)


def test_inac_exact_critic_reaches_optimal_on_separable():
    spec = envs.RandomMdpSpec(n=2, state_sizes=(2, 2), action_sizes=(2, 2),
                              coupling=0.0, seed=41, gamma=0.8)
    m, kern = envs.random_factored_mdp_with_witness(spec)
    cfg = InacConfig(T=30, K=1, seed=0, eta_mode="policy-space-schedule",
                     exact_critic_kernel=kern)
    res = inac_run(m, cfg)
    q = solvers.value_iteration(m)
    v = q.max(axis=1)
    pi = joint_policy_of(res.policy, (2, 2), (2, 2))
    chosen = q[np.arange(m.num_states), pi.table.argmax(axis=1)]
    assert np.abs(chosen - v).max() < 1e-8


def test_inac_deterministic(small_mdp):
    cfg = InacConfig(T=4, K=50, seed=9, epsilon_explore=0.1, epsilon_decay=True)
    a = inac_run(small_mdp, cfg)
    b = inac_run(small_mdp, cfg)
    for t1, t2 in zip(a.theta, b.theta):
        assert np.array_equal(t1, t2)
    assert a.etas == b.etas


def test_inac_eta_history_grows(small_mdp):
    cfg = InacConfig(T=6, K=20, seed=0, eta_mode="policy-space-schedule",
                     eta0=0.2, eta_growth="plain")
    res = inac_run(small_mdp, cfg)
    assert len(res.etas) == 6
    assert res.etas[0] == 0.2
    assert all(b >= a for a, b in zip(res.etas, res.etas[1:]))


def test_inac_metrics_recorded(small_mdp):
    cfg = InacConfig(T=3, K=30, seed=0, eval_metrics=True)
    res = inac_run(small_mdp, cfg)
    metrics = {e[2] for e in res.record.events}
    assert "q_gap_sup" in metrics
    assert "normalized_reward" in metrics
