import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from numba import njit
from sklearn.base import clone

from aoisched import BanditDivergenceError, SchedulerView, SystemConfig
from aoisched.bandit import (
    BanditConfig,
    BanditParams,
    EpsilonGreedyPolicy,
    _select_egreedy,
    features,
    reward_estimate,
    select_egreedy,
    sigmoid,
    update_params,
)
from aoisched.policies import Action


def cross_entropy(psi, x, y):
    z = psi @ x
    p = 1 / (1 + math.exp(-z))
    return -y * math.log(p) - (1 - y) * math.log(1 - p)


def squared_error(theta, x, y):
    return 0.5 * (theta @ x - y) ** 2


def central_difference(loss, w, x, y, h=1e-6):
    out = np.empty(2)
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        out[i] = (loss(w + e, x, y) - loss(w - e, x, y)) / (2 * h)
    return out


@njit
def _egreedy_counts(ages, tau, theta, psi, eps, draws, rng):
    counts = np.zeros(tau.shape)
    for _ in range(draws):
        n, k = _select_egreedy(ages, tau, theta, psi, eps, rng)
        counts[n, k] += 1
    return counts


def view(ages, tau, slot=50):
    return SchedulerView(slot, np.asarray(ages, float), np.asarray(tau, float))


class TestModel:
    def test_features(self):
        assert list(features(view([3.0], [[0.0]]), 0, 0)) == [1.0, 0.0]
        assert list(features(view([3.0], [[4.0]]), 0, 0)) == [1.0, 4.0]
        assert list(features(view([2.0], [[50.0]]), 0, 0)) == [1.0, 3.0]

    def test_sigmoid(self):
        assert sigmoid(0) == 0.5
        assert sigmoid(700) == 1.0
        assert sigmoid(-700) == pytest.approx(0.0, abs=1e-300)
        assert math.isfinite(sigmoid(-1e4)) and math.isfinite(sigmoid(1e4))

    @given(st.floats(-700, 700))
    def test_sigmoid_symmetry(self, z):
        assert sigmoid(z) + sigmoid(-z) == pytest.approx(1.0, abs=1e-15)

    def test_reward_estimate(self):
        zero = np.zeros(2)
        assert reward_estimate([1, 4], zero, zero, 10) == 5.5
        assert reward_estimate([1, 4], np.array([0.0, 1.0]), zero, 10) == 3.5
        assert reward_estimate([1, 4], zero, np.array([-800.0, 0.0]), 10) == 0.0


class TestSelection:
    def test_full_exploration_is_uniform(self):
        rng = np.random.default_rng(12)
        theta = np.random.default_rng(0).normal(size=(2, 2, 2))
        counts = _egreedy_counts(np.array([1.0, 9.0]), np.ones((2, 2)), theta, theta.copy(),
                                 1.0, 1_000_000, rng)
        np.testing.assert_allclose(counts / counts.sum(), 0.25, atol=0.003)

    def test_exploration_ignores_params(self):
        a = BanditParams.zeros(3, 2)
        b = BanditParams(np.full((3, 2, 2), 5.0), np.full((3, 2, 2), -3.0))
        v = view([1.0, 2.0], np.ones((3, 2)))
        draws_a = [select_egreedy(a, v, 1.0, rng) for rng in [np.random.default_rng(1)] * 100]
        draws_b = [select_egreedy(b, v, 1.0, rng) for rng in [np.random.default_rng(1)] * 100]
        assert draws_a == draws_b

    def test_greedy_zero_params_picks_oldest_source(self):
        params = BanditParams.zeros(3, 3)
        v = view([2.0, 7.0, 5.0], np.full((3, 3), 10.0))
        assert select_egreedy(params, v, 0.0, np.random.default_rng(0)).source == 1

    def test_greedy_tie_break(self):
        params = BanditParams.zeros(2, 2)
        v = view([4.0, 4.0], np.full((2, 2), 10.0))
        assert select_egreedy(params, v, 0.0, np.random.default_rng(0)) == Action(0, 0)

    def test_epsilon_out_of_range(self):
        with pytest.raises(ValueError):
            select_egreedy(BanditParams.zeros(1, 1), view([0.0], [[1.0]]), 1.5,
                           np.random.default_rng(0))


class TestUpdate:
    def test_psi_step_on_reward(self):
        out = update_params(BanditParams.zeros(1, 1), Action(0, 0), [1.0, 2.0], 3.0, 10.0, 1e-5)
        np.testing.assert_allclose(out.psi[0, 0], [5e-6, 1e-5], rtol=1e-12)
        # theta target is the delivered age 10 + 1 - 3 = 8
        np.testing.assert_allclose(out.theta[0, 0], [8e-5, 16e-5], rtol=1e-12)

    def test_no_reward_leaves_theta(self):
        params = BanditParams(np.full((1, 1, 2), 0.3), np.zeros((1, 1, 2)))
        out = update_params(params, Action(0, 0), [1.0, 2.0], 0.0, 10.0, 0.1)
        np.testing.assert_array_equal(out.theta, params.theta)
        assert np.all(out.psi[0, 0] < 0)

    def test_cross_entropy_gradient_example(self):
        psi, x = np.array([0.3, -0.2]), np.array([1.0, 4.0])
        analytic = (sigmoid(psi @ x) - 1) * x
        np.testing.assert_allclose(analytic, central_difference(cross_entropy, psi, x, 1),
                                   rtol=1e-6)

    def test_gradients_random_points(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            x = np.array([1.0, rng.uniform(0, 4)])
            psi = rng.uniform(-0.5, 0.5, 2)
            y = rng.integers(0, 2)
            analytic = (sigmoid(psi @ x) - y) * x
            np.testing.assert_allclose(analytic, central_difference(cross_entropy, psi, x, y),
                                       rtol=1e-6)
            theta = rng.uniform(-2, 2, 2)
            target = theta @ x + rng.choice([-1, 1]) * rng.uniform(0.5, 5)
            analytic = (theta @ x - target) * x
            np.testing.assert_allclose(
                analytic, central_difference(squared_error, theta, x, target), rtol=1e-6)

    def test_sgd_matches_gradients(self):
        # update_params must take exactly one step along the stated gradients
        rng = np.random.default_rng(6)
        for _ in range(50):
            params = BanditParams(rng.normal(size=(1, 1, 2)), rng.normal(size=(1, 1, 2)))
            x = np.array([1.0, rng.uniform(0, 5)])
            prev, reward, alpha = rng.uniform(0, 20), rng.uniform(0.1, 5), 1e-3
            out = update_params(params, Action(0, 0), x, reward, prev, alpha)
            th, ps = params.theta[0, 0], params.psi[0, 0]
            np.testing.assert_allclose(out.theta[0, 0],
                                       th - alpha * (th @ x - (prev + 1 - reward)) * x, rtol=1e-13)
            np.testing.assert_allclose(out.psi[0, 0],
                                       ps - alpha * (sigmoid(ps @ x) - 1) * x, rtol=1e-13)

    @given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0, 10), st.floats(1e-6, 1e-2))
    def test_positive_label_raises_gate(self, p0, p1, sigma, alpha):
        params = BanditParams(np.zeros((1, 1, 2)), np.array([[[p0, p1]]]))
        x = np.array([1.0, sigma])
        after = update_params(params, Action(0, 0), x, 1.0, 5.0, alpha)
        # compared on the logit: the sigmoid saturates in floating point
        assert after.psi[0, 0] @ x > params.psi[0, 0] @ x
        assert sigmoid(after.psi[0, 0] @ x) >= sigmoid(params.psi[0, 0] @ x)

    @given(st.floats(0, 5), st.floats(0.1, 1.9), st.floats(0, 30))
    def test_regression_residual_non_increasing(self, sigma, step, target):
        x = np.array([1.0, sigma])
        alpha = step / (x @ x)
        params = BanditParams.zeros(1, 1)
        prev = target + 2.0  # reward 3 gives delivered age = target
        last = abs(target)
        for _ in range(30):
            params = update_params(params, Action(0, 0), x, 3.0, prev, alpha)
            resid = abs(params.theta[0, 0] @ x - target)
            assert resid <= last * (1 + 1e-12) + 1e-12
            last = resid

    def test_only_scheduled_pair_changes(self):
        rng = np.random.default_rng(1)
        params = BanditParams(rng.normal(size=(3, 4, 2)), rng.normal(size=(3, 4, 2)))
        out = update_params(params, Action(2, 1), [1.0, 3.0], 1.5, 6.0, 0.01)
        mask = np.ones((3, 4), bool)
        mask[2, 1] = False
        np.testing.assert_array_equal(out.theta[mask], params.theta[mask])
        np.testing.assert_array_equal(out.psi[mask], params.psi[mask])
        assert not np.array_equal(out.theta[2, 1], params.theta[2, 1])

    def test_divergence(self):
        params = BanditParams(np.full((1, 1, 2), 1e300), np.zeros((1, 1, 2)))
        with pytest.raises(BanditDivergenceError) as err:
            update_params(params, Action(0, 0), [1.0, 100.0], 1.0, 5.0, 1e10, slot=17)
        assert err.value.slot == 17 and err.value.alpha == 1e10


class TestEstimator:
    cfg = SystemConfig(2, 3, 0.5, np.full((3, 2), 0.5))

    def test_params_roundtrip(self):
        est = EpsilonGreedyPolicy(alpha=1e-3, explore_slots=10)
        assert clone(est).get_params() == est.get_params()
        assert est.get_params()["alpha"] == 1e-3

    def test_fit_zero_initialises(self):
        est = EpsilonGreedyPolicy().fit(self.cfg)
        assert est.params_.theta.shape == (3, 2, 2)
        assert not est.params_.theta.any() and not est.params_.psi.any()

    def test_epsilon_schedule(self):
        sched = BanditConfig(1e-5, 50_000, 1.0, 0.1)
        assert sched.epsilon_at(1) == 1.0
        assert sched.epsilon_at(50_000) == 1.0
        assert sched.epsilon_at(50_001) == 0.1

    def test_invalid_config(self):
        from aoisched import ConfigurationError

        with pytest.raises(ConfigurationError):
            BanditConfig(step_size=0.0)
        with pytest.raises(ConfigurationError):
            BanditConfig(epsilon_exploit=1.5)

    def test_partial_fit_uses_decision_view(self):
        est = EpsilonGreedyPolicy(alpha=0.1).fit(self.cfg)
        v = view([4.0, 1.0], np.full((3, 2), 2.0))
        est.partial_fit(v, Action(1, 0), reward=2.0)
        expected = update_params(BanditParams.zeros(3, 2), Action(1, 0), [1.0, 2.0], 2.0, 4.0, 0.1)
        np.testing.assert_array_equal(est.params_.theta, expected.theta)
        np.testing.assert_array_equal(est.params_.psi, expected.psi)
