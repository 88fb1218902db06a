import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_mdp
from fgdqn.envs import CUT, WAIT, ForestParams, forest_build_mdp
from fgdqn.mdp import (
    TabularMdp,
    bellman_operator,
    greedy_policy,
    policy_evaluation,
    policy_iteration,
    q_value_iteration,
    stationary_distribution,
    value_iteration,
)
from fgdqn.validation import ValidationError

PI_STAR_LOW = [0, 0, 1, 1, 1, 1, 1, 1, 1, 1]
PI_STAR_HIGH = [0, 0, 0, 0, 0, 1, 1, 1, 1, 1]


class TestValidation:
    def test_rows_must_sum_to_one(self):
        p = np.full((2, 1, 2), 0.5)
        p[0, 0] = [0.5, 0.6]
        with pytest.raises(ValidationError):
            TabularMdp(p, np.zeros((2, 1)), 0.5)

    def test_negative_probability(self):
        p = np.array([[[1.5, -0.5]], [[0.0, 1.0]]])
        with pytest.raises(ValidationError):
            TabularMdp(p, np.zeros((2, 1)), 0.5)

    @pytest.mark.parametrize("gamma", [-0.1, 1.0, 1.5])
    def test_discount_range(self, gamma):
        with pytest.raises(ValidationError):
            TabularMdp(np.ones((1, 1, 1)), np.zeros((1, 1)), gamma)

    def test_nonpositive_tol(self, forest):
        with pytest.raises(ValidationError):
            value_iteration(forest, tol=0)
        with pytest.raises(ValidationError):
            q_value_iteration(forest, tol=-1)

    def test_json_round_trip(self, forest):
        doc = json.loads(forest.to_json())
        assert set(doc) == {"num_states", "num_actions", "transition", "reward", "discount"}
        back = TabularMdp.from_json(forest.to_json())
        np.testing.assert_array_equal(back.transition, forest.transition)
        np.testing.assert_array_equal(back.reward, forest.reward)
        assert back.discount == forest.discount


class TestValueIteration:
    def test_zero_discount_forest(self):
        mdp = forest_build_mdp(ForestParams(10, 0.05, 0.0))
        v, iters = value_iteration(mdp)
        np.testing.assert_array_equal(v, np.arange(10.0))
        assert iters == 1

    def test_residual_within_tol(self, forest):
        v, iters = value_iteration(forest, tol=1e-10)
        assert iters < 100_000
        assert np.max(np.abs(bellman_operator(forest, v) - v)) <= 1e-10

    def test_iterates_contract(self, forest):
        v = np.random.default_rng(0).normal(size=10) * 50
        prev_step = None
        for _ in range(30):
            nv = bellman_operator(forest, v)
            step = np.max(np.abs(nv - v))
            if prev_step is not None:
                assert step <= forest.discount * prev_step + 1e-12
            prev_step, v = step, nv

    def test_greedy_policy_matches_reported_optimum(self, forest):
        v, _ = value_iteration(forest)
        q = forest.reward + forest.discount * forest.transition @ v
        assert greedy_policy(q).tolist() == PI_STAR_LOW

    def test_max_iters_flag(self, forest):
        _, iters = value_iteration(forest, tol=1e-12, max_iters=3)
        assert iters == 3


class TestQValueIteration:
    def test_zero_discount(self):
        q = q_value_iteration(forest_build_mdp(ForestParams(10, 0.05, 0.0)))
        np.testing.assert_array_equal(q[:, CUT], np.arange(10.0))
        np.testing.assert_array_equal(q[:, WAIT], np.zeros(10))

    def test_high_discount_policy(self, forest_high):
        assert greedy_policy(q_value_iteration(forest_high)).tolist() == PI_STAR_HIGH

    def test_agrees_with_value_iteration(self, forest):
        tol = 1e-10
        q = q_value_iteration(forest, tol=tol)
        v, _ = value_iteration(forest, tol=tol)
        assert np.max(np.abs(q.max(axis=1) - v)) <= 2 * tol / (1 - forest.discount)


class TestPolicyIteration:
    def test_low_discount_optimum(self, forest):
        assert policy_iteration(forest)[0].tolist() == PI_STAR_LOW

    def test_high_discount_optimum(self, forest_high):
        assert policy_iteration(forest_high)[0].tolist() == PI_STAR_HIGH

    def test_zero_discount_ties_go_to_wait(self):
        pi, _ = policy_iteration(forest_build_mdp(ForestParams(10, 0.05, 0.0)))
        assert pi.tolist() == [0] + [1] * 9

    def test_value_satisfies_dp_equation(self, forest):
        _, v = policy_iteration(forest)
        assert np.max(np.abs(bellman_operator(forest, v) - v)) < 1e-9

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_q_value_iteration_where_gap_is_clear(self, seed):
        mdp = random_mdp(np.random.default_rng(seed))
        pi, _ = policy_iteration(mdp)
        q = q_value_iteration(mdp, tol=1e-10)
        srt = np.sort(q, axis=1)
        gap = srt[:, -1] - srt[:, -2] if mdp.num_actions > 1 else np.full(mdp.num_states, np.inf)
        clear = gap > 1e-8
        np.testing.assert_array_equal(pi[clear], greedy_policy(q)[clear])


class TestPolicyEvaluation:
    def test_always_cut(self, forest):
        v = policy_evaluation(forest, np.ones(10, dtype=int))
        np.testing.assert_allclose(v, np.arange(10.0), atol=1e-12)

    def test_optimal_policy_reproduces_value_iteration(self, forest):
        v_star, _ = value_iteration(forest)
        np.testing.assert_allclose(policy_evaluation(forest, PI_STAR_LOW), v_star, atol=1e-8)

    def test_uniform_policy_against_monte_carlo(self, forest):
        # 10^4 rollouts x 100 steps = 10^6 simulated steps from state 0; 0.8^100 < 1e-9.
        rng = np.random.default_rng(12345)
        n_roll, horizon = 10_000, 100
        x = np.zeros(n_roll, dtype=int)
        ret = np.zeros(n_roll)
        disc = 1.0
        for _ in range(horizon):
            u = rng.integers(0, 2, size=n_roll)
            ret += disc * np.where(u == CUT, x, 0.0)
            fire = rng.random(n_roll) < 0.05
            x = np.where((u == CUT) | fire, 0, np.minimum(x + 1, 9))
            disc *= 0.8
        stderr = ret.std(ddof=1) / np.sqrt(n_roll)
        v = policy_evaluation(forest, np.full((10, 2), 0.5))
        assert abs(v[0] - ret.mean()) < 3 * stderr

    def test_rejects_bad_policy(self, forest):
        with pytest.raises(ValidationError):
            policy_evaluation(forest, [0] * 9)
        with pytest.raises(ValidationError):
            policy_evaluation(forest, [2] * 10)


class TestStationaryDistribution:
    def test_always_wait_geometric_law(self, forest):
        mu = stationary_distribution(forest, np.zeros(10, dtype=int))
        p = 0.05
        expected = np.array([p * (1 - p) ** x for x in range(9)] + [(1 - p) ** 9])
        np.testing.assert_allclose(mu[:, WAIT], expected, atol=1e-10)
        assert np.all(mu[:, CUT] == 0)

    @pytest.mark.parametrize("seed", range(5))
    def test_invariance_under_random_policy(self, seed):
        rng = np.random.default_rng(seed)
        mdp = random_mdp(rng, s=8, a=3)
        phi = rng.random((8, 3))
        phi /= phi.sum(axis=1, keepdims=True)
        mu = stationary_distribution(mdp, phi)
        assert mu.min() >= 0 and abs(mu.sum() - 1) < 1e-12
        state_law = mu.sum(axis=1)
        moved = np.einsum("xu,xuy->y", mu, mdp.transition)
        np.testing.assert_allclose(moved, state_law, atol=1e-10)

    def test_periodic_chain(self):
        p = np.array([[[0.0, 1.0]], [[1.0, 0.0]]])
        mu = stationary_distribution(TabularMdp(p, np.zeros((2, 1)), 0.5), [0, 0])
        np.testing.assert_allclose(mu[:, 0], [0.5, 0.5], atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_bellman_operator_is_contraction(seed):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng)
    v, w = rng.normal(size=(2, mdp.num_states)) * 10
    lhs = np.max(np.abs(bellman_operator(mdp, v) - bellman_operator(mdp, w)))
    assert lhs <= mdp.discount * np.max(np.abs(v - w)) + 1e-12


def test_oracles_agree_on_random_mdps():
    for seed in range(100):
        mdp = random_mdp(np.random.default_rng(1000 + seed))
        v_vi, _ = value_iteration(mdp, tol=1e-10)
        q = q_value_iteration(mdp, tol=1e-10)
        _, v_pi = policy_iteration(mdp)
        assert np.max(np.abs(v_vi - q.max(axis=1))) < 1e-6
        assert np.max(np.abs(v_vi - v_pi)) < 1e-6
        assert np.max(np.abs(v_pi - q.max(axis=1))) < 1e-6
