import math

import numpy as np
import pytest

from oracles import assert_grad_close, central_differences
from portfolio_rl.environment import EnvConfig
from portfolio_rl.neural import Arch, NetworkParams, init_params, policy_cnn_forward, value_cnn_forward
from portfolio_rl.pgac import (
    GaussianPolicy,
    PgacConfig,
    SigmaSchedule,
    Trajectory,
    advantage,
    batch_advantages,
    fit_value,
    log_prob,
    log_prob_grad,
    normalize,
    policy_update,
    sample_action,
    train_pgac,
)
from portfolio_rl.rng import make_rng

POLICY = Arch("pgac_policy", 3, 5, 2, activation="tanh")
VALUE = Arch("pgac_value", 3, 5, 2)


def random_state(rng, arch=POLICY, batch=None):
    shape = arch.state_shape if batch is None else (batch, *arch.state_shape)
    return 100.0 * (1 + 0.02 * rng.standard_normal(shape))


def random_params(rng, arch, scale=0.5):
    return NetworkParams.unflatten(arch, scale * rng.standard_normal(NetworkParams.zeros(arch).size))


def one_step(state, prev, action, reward, next_state=None, terminal=True):
    next_state = state if next_state is None else next_state
    return Trajectory(state[None], prev[None], np.atleast_1d(action)[None], np.array([reward]),
                      next_state[None], np.zeros((1, len(prev))), terminal=terminal)


class TestSampleAction:
    def test_small_sigma_returns_mean(self, rng):
        mu = np.array([0.3, -0.2])
        raw, clamped = sample_action(mu, 1e-12, rng)
        np.testing.assert_allclose(raw, mu, atol=1e-10)
        np.testing.assert_allclose(clamped, mu, atol=1e-10)

    def test_sample_mean(self):
        rng = make_rng(3)
        mu, sigma, n = np.array([0.1, -0.4, 0.6]), 0.2, 100_000
        draws, _ = sample_action(np.tile(mu, (n, 1)), sigma, rng)
        assert np.all(np.abs(draws.mean(0) - mu) < 3 * sigma / math.sqrt(n))
        np.testing.assert_allclose(draws.std(0), sigma, rtol=0.02)

    def test_clamp(self, rng):
        hit = False
        for _ in range(200):
            raw, clamped = sample_action(np.array([0.999]), 0.5, rng)
            assert clamped[0] <= 1.0
            hit |= clamped[0] == 1.0 and raw[0] > 1.0
        assert hit

    def test_rejects_non_positive_sigma(self, rng):
        with pytest.raises(ValueError):
            sample_action(np.zeros(2), 0.0, rng)


class TestLogProbGrad:
    def test_zero_at_mean(self, rng):
        params = random_params(rng, POLICY)
        mu, rec = policy_cnn_forward(params, random_state(rng), np.array([1.0, 0, 0]))
        np.testing.assert_array_equal(log_prob_grad(mu, mu[1:], np.full(2, 0.1), rec), 0.0)

    def test_finite_differences(self, rng):
        for _ in range(10):
            params = random_params(rng, POLICY)
            state, prev = random_state(rng), rng.uniform(-1, 1, 3)
            sigma = rng.uniform(0.05, 0.5, 2)
            mu, rec = policy_cnn_forward(params, state, prev)
            action = mu[1:] + sigma * rng.standard_normal(2)

            def f(flat):
                m, _ = policy_cnn_forward(params.with_flat(flat), state, prev)
                return log_prob(m[1:], action, sigma)

            assert_grad_close(log_prob_grad(mu, action, sigma, rec), central_differences(f, params.flatten()))

    def test_linear_in_inverse_variance(self, rng):
        params = random_params(rng, POLICY)
        mu, rec = policy_cnn_forward(params, random_state(rng), np.zeros(3))
        action = mu[1:] + np.array([0.05, -0.03])
        g1 = log_prob_grad(mu, action, 0.2, rec)
        g2 = log_prob_grad(mu, action, 0.2 / math.sqrt(2), rec)
        np.testing.assert_allclose(g2, 2 * g1, rtol=1e-12, atol=1e-15)

    def test_score_has_zero_mean(self):
        # E[grad log pi] = 0 under the policy's own sampling distribution
        rng = make_rng(9)
        params = random_params(rng, POLICY)
        mu, rec = policy_cnn_forward(params, random_state(rng), np.zeros(3))
        sigma = 0.1
        grads = np.array([log_prob_grad(mu, sample_action(mu[1:], sigma, rng)[0], sigma, rec) for _ in range(4000)])
        se = grads.std(0) / math.sqrt(len(grads))
        assert np.all(np.abs(grads.mean(0)) <= 4.5 * se + 1e-12)


class TestAdvantage:
    def test_zero_value_net(self, rng):
        value = NetworkParams.zeros(VALUE)
        assert advantage(0.3, random_state(rng, VALUE), random_state(rng, VALUE), value) == 0.3

    def test_same_state_zero_reward(self, rng):
        value = random_params(rng, VALUE)
        s = random_state(rng, VALUE)
        assert advantage(0.0, s, s, value) == 0.0

    def test_direct_formula(self, rng):
        value = random_params(rng, VALUE)
        s, s2 = random_state(rng, VALUE), random_state(rng, VALUE)
        v, v2 = value_cnn_forward(value, s)[0], value_cnn_forward(value, s2)[0]
        assert advantage(0.01, s, s2, value) == pytest.approx(0.01 + v2 - v, abs=1e-15)
        assert advantage(0.01, s, s2, value, terminal=True) == pytest.approx(0.01 - v, abs=1e-15)

    def test_batch_matches_single(self, rng):
        value = random_params(rng, VALUE)
        states = random_state(rng, VALUE, 5)
        nexts = random_state(rng, VALUE, 5)
        rewards = rng.standard_normal(5)
        for terminal in (True, False):
            traj = Trajectory(states, np.zeros((5, 3)), np.zeros((5, 2)), rewards, nexts, np.zeros((5, 3)), terminal)
            expected = [advantage(rewards[i], states[i], nexts[i], value, terminal and i == 4) for i in range(5)]
            np.testing.assert_allclose(batch_advantages([traj], value), expected, atol=1e-14)


class TestFitValue:
    def test_converges_on_one_state(self, rng):
        s = random_state(rng, VALUE)
        traj = one_step(s, np.zeros(3), np.zeros(2), 0.4)
        value, mse = fit_value([traj], init_params(VALUE, 0), epochs=500, lr=0.05)
        assert mse < 1e-3
        assert value_cnn_forward(value, s)[0] == pytest.approx(0.4, abs=0.032)

    def test_zero_epochs(self, rng):
        value = init_params(VALUE, 0)
        traj = one_step(random_state(rng, VALUE), np.zeros(3), np.zeros(2), 1.0)
        out, _ = fit_value([traj], value, epochs=0)
        assert out.flatten().tobytes() == value.flatten().tobytes()

    def test_loss_non_increasing(self, rng):
        states = random_state(rng, VALUE, 8)
        traj = Trajectory(states, np.zeros((8, 3)), np.zeros((8, 2)), 0.01 * rng.standard_normal(8),
                          states, np.zeros((8, 3)))
        value, losses = init_params(VALUE, 1), []
        for _ in range(20):
            value, mse = fit_value([traj], value, epochs=1, lr=1e-3)
            losses.append(mse)
        assert all(b <= a + 1e-15 for a, b in zip(losses, losses[1:]))


class TestPolicyUpdate:
    def test_zero_advantage_leaves_params(self, rng):
        net = random_params(rng, POLICY)
        value = NetworkParams.zeros(VALUE)
        s = random_state(rng)
        trajs = [one_step(s, np.zeros(3), rng.standard_normal(2), 0.0) for _ in range(4)]
        out = policy_update(trajs, GaussianPolicy(net, np.full(2, 0.1)), value, 0.1)
        assert out.flatten().tobytes() == net.flatten().tobytes()

    def test_single_step_follows_log_prob_grad(self, rng):
        net = random_params(rng, POLICY)
        s, prev = random_state(rng), np.array([1.0, 0, 0])
        mu, rec = policy_cnn_forward(net, s, prev)
        action = mu[1:] + np.array([0.05, -0.02])
        traj = one_step(s, prev, action, 1.0)
        out = policy_update([traj], GaussianPolicy(net, np.full(2, 0.1)), NetworkParams.zeros(VALUE), 0.01,
                            normalize_advantages=False)
        expected = net.flatten() + 0.01 * log_prob_grad(mu, action, 0.1, rec)
        np.testing.assert_allclose(out.flatten(), expected, rtol=1e-12, atol=1e-15)

    def test_normalize(self):
        a = normalize(np.array([1.0, 2.0, 3.0]))
        assert a.mean() == pytest.approx(0, abs=1e-15) and a.std() == pytest.approx(1)
        np.testing.assert_array_equal(normalize(np.array([2.0, 2.0])), 0.0)
        np.testing.assert_array_equal(normalize(np.array([5.0])), [5.0])

    def test_toy_bandit(self):
        """One state, reward -(a - 0.7)^2: the mean action moves to 0.7."""
        arch = Arch("pgac_policy", 2, 3, 1)
        net = init_params(arch, 0)
        value = NetworkParams.zeros(Arch("pgac_value", 2, 3, 1))
        state, prev = np.full((2, 3, 1), 100.0), np.array([1.0, 0.0])
        rng = make_rng(0)
        sigma = np.array([0.1])
        for _ in range(3000):
            gp = GaussianPolicy(net, sigma)
            mu = gp.mean(state, prev)
            trajs = []
            for _ in range(16):
                raw, _ = sample_action(mu[1:], sigma, rng)
                trajs.append(one_step(state, prev, raw, -(raw[0] - 0.7) ** 2))
            net = policy_update(trajs, gp, value, 0.002)
        assert abs(GaussianPolicy(net, sigma).mean(state, prev)[1] - 0.7) < 0.05


class TestSchedule:
    def test_linear(self):
        s = SigmaSchedule(0.1, 0.01, 10)
        assert s(0) == 0.1
        assert s(9) == pytest.approx(0.01)
        assert s(100) == pytest.approx(0.01)
        assert s(3) == pytest.approx(0.07)

    def test_invalid(self):
        with pytest.raises(ValueError):
            SigmaSchedule(0.01, 0.1)


class TestTrain:
    CFG = PgacConfig(episodes=6, batch_size=3, alpha_policy=1e-2, seed=4)
    ENV = EnvConfig(horizon=5, episode_cap=10)

    def test_zero_episodes(self, noisy_cube):
        res = train_pgac(noisy_cube, self.ENV, PgacConfig(episodes=0))
        assert res.history == []
        p_arch = Arch("pgac_policy", 4, 5, 7)
        assert res.policy.flatten().tobytes() == init_params(p_arch, 0).flatten().tobytes()

    def test_same_seed_same_history(self, noisy_cube):
        a = train_pgac(noisy_cube, self.ENV, self.CFG, train_end=100)
        b = train_pgac(noisy_cube, self.ENV, self.CFG, train_end=100)
        assert a.history == b.history
        assert a.policy.flatten().tobytes() == b.policy.flatten().tobytes()
        assert len(a.history) == 2

    def test_executed_weights_valid(self, noisy_cube):
        res = train_pgac(noisy_cube, self.ENV, self.CFG, train_end=100)
        for row in res.history:
            assert row["max_sum_error"] <= 1e-12 * 4
            assert -1 <= row["min_risky_weight"] <= row["max_risky_weight"] <= 1

    def test_short_training_range(self, noisy_cube):
        with pytest.raises(ValueError):
            train_pgac(noisy_cube, self.ENV, self.CFG, train_end=15)
