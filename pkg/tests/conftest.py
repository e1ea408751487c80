import numpy as np
import pytest

from iltab import envs
from iltab.mdp import FactoredMdp


def make_mdp(n, state_sizes, action_sizes, gamma, seed):
    """Dense random valid MDP with dirichlet rows."""
    rng = np.random.default_rng(seed)
    num_s = int(np.prod(state_sizes))
    num_a = int(np.prod(action_sizes))
    trans = rng.dirichlet(np.ones(num_s), size=(num_a, num_s))
    rewards = tuple(rng.uniform(0, 1, size=(ns, na))
                    for ns, na in zip(state_sizes, action_sizes))
    return FactoredMdp(n=n, local_state_sizes=tuple(state_sizes),
                       local_action_sizes=tuple(action_sizes),
                       transition=trans, rewards=rewards, gamma=gamma)


def single_agent_mdp(num_s, num_a, gamma, seed):
    return make_mdp(1, (num_s,), (num_a,), gamma, seed)


@pytest.fixture
def small_mdp():
    return make_mdp(2, (2, 2), (2, 2), 0.9, 12345)


@pytest.fixture
def coupled_pair():
    spec = envs.RandomMdpSpec(n=2, state_sizes=(2, 2), action_sizes=(2, 2),
                              coupling=0.3, seed=7, gamma=0.9)
    return envs.random_factored_mdp_with_witness(spec)
