import numpy as np
import pytest

from fgdqn.envs import ForestParams, forest_build_mdp
from fgdqn.mdp import TabularMdp


@pytest.fixture
def forest():
    return forest_build_mdp(ForestParams(10, 0.05, 0.8))


@pytest.fixture
def forest_high():
    return forest_build_mdp(ForestParams(10, 0.01, 0.95))


def random_mdp(rng, s=None, a=None, discount=None):
    s = s or int(rng.integers(1, 21))
    a = a or int(rng.integers(1, 6))
    p = rng.random((s, a, s)) ** 3
    p /= p.sum(axis=2, keepdims=True)
    r = rng.normal(size=(s, a))
    gamma = rng.uniform(0.1, 0.95) if discount is None else discount
    return TabularMdp(p, r, gamma)
