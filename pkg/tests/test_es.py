import math

import numpy as np
import pytest

from oracles import bisect_zeta
from portfolio_rl import neural
from portfolio_rl.environment import CostModel, EnvConfig, reset
from portfolio_rl.es import (
    EsConfig,
    centered_ranks,
    es_arch,
    es_gradient,
    es_optimize,
    make_tasks,
    noise,
    perturb,
    policy_action,
    rollout,
    rollout_return,
    train_es,
)
from portfolio_rl.neural import Arch, NetworkParams, init_params

ARCH = Arch("es_mlp", 4, 3, 7, hidden=8)


class TestPerturb:
    def test_same_seed_same_noise(self):
        assert noise((1, 2, 3), 50).tobytes() == noise((1, 2, 3), 50).tobytes()

    def test_antithetic_is_negation(self):
        params = init_params(ARCH, 0)
        theta = params.flatten()
        up = perturb(params, (0, 0, 5), 1, 0.1).flatten() - theta
        down = perturb(params, (0, 0, 5), -1, 0.1).flatten() - theta
        np.testing.assert_allclose(up, -down, rtol=1e-12, atol=1e-15)

    def test_zero_sigma_is_identity(self):
        params = init_params(ARCH, 0)
        assert perturb(params, 3, 1, 0.0).flatten().tobytes() == params.flatten().tobytes()

    def test_distinct_seeds_uncorrelated(self):
        dim = 20_000
        corr = np.corrcoef(noise((0, 0, 0), dim), noise((0, 0, 1), dim))[0, 1]
        assert abs(corr) < 4 / math.sqrt(dim)
        e = noise((7,), dim)
        assert abs(e.mean()) < 4 / math.sqrt(dim)
        assert abs(e.std() - 1) < 0.02

    def test_tasks(self):
        tasks = make_tasks(EsConfig(population=4, seed=9), 2)
        assert [t.sign for t in tasks] == [1, -1, 1, -1]
        assert tasks[0].seed == tasks[1].seed == (9, 2, 0)
        plain = make_tasks(EsConfig(population=3, antithetic=False), 0)
        assert len({t.seed for t in plain}) == 3


class TestGradient:
    def test_equal_fitness_gives_zero(self):
        seeds = [(0, 0, k) for k in range(6)]
        for shaping in (True, False):
            g = es_gradient(np.full(6, 2.5), seeds, [1] * 6, 0.1, 10, shaping)
            np.testing.assert_array_equal(g, 0.0)

    def test_antithetic_even_function_cancels(self):
        dim, sigma = 10, 0.1
        tasks = make_tasks(EsConfig(population=20, seed=1), 0)
        theta = np.zeros(dim)
        fits = [float(np.sum((theta + t.sign * sigma * noise(t.seed, dim)) ** 2)) for t in tasks]
        for shaping in (True, False):
            g = es_gradient(fits, [t.seed for t in tasks], [t.sign for t in tasks], sigma, dim, shaping)
            np.testing.assert_array_equal(g, 0.0)

    def test_rank_shaping_invariant_to_monotone_transform(self, rng):
        fits = rng.standard_normal(16)
        seeds = [(0, 0, k) for k in range(16)]
        a = es_gradient(fits, seeds, [1] * 16, 0.1, 30)
        b = es_gradient(np.exp(fits), seeds, [1] * 16, 0.1, 30)
        assert a.tobytes() == b.tobytes()

    def test_direct_formula(self, rng):
        fits = rng.standard_normal(4)
        seeds = [(3, k) for k in range(4)]
        signs = [1, -1, 1, -1]
        shaped = fits - fits.mean()
        expected = sum(shaped[k] * signs[k] * noise(seeds[k], 7) for k in range(4)) / (4 * 0.2)
        np.testing.assert_allclose(es_gradient(fits, seeds, signs, 0.2, 7, False), expected, rtol=1e-12)

    def test_centered_ranks(self):
        np.testing.assert_allclose(centered_ranks([3.0, 1.0, 2.0]), [0.5, -0.5, 0.0])
        np.testing.assert_allclose(centered_ranks([1.0, 1.0, 5.0, 0.0]), [0, 0, 0.5, -0.5])

    def test_too_few(self):
        with pytest.raises(ValueError):
            es_gradient([1.0], [(0,)], [1], 0.1, 3)


class TestOptimize:
    def test_climbs_linear_objective(self):
        a = np.arange(1.0, 6.0)
        cfg = EsConfig(population=20, iterations=30, learning_rate=0.1, seed=2)
        theta, history = es_optimize(lambda th: float(a @ th), np.zeros(5), cfg)
        assert a @ theta > 0
        assert len(history) == 30

    def test_callback_and_determinism(self):
        cfg = EsConfig(population=8, iterations=5, seed=3)
        seen = []
        f = lambda th: -float(th @ th)
        t1, h1 = es_optimize(f, np.ones(4), cfg, callback=lambda it, th, res: seen.append(it))
        t2, h2 = es_optimize(f, np.ones(4), cfg)
        assert seen == list(range(5))
        assert t1.tobytes() == t2.tobytes() and h1 == h2


class TestRollout:
    def test_riskless_policy_returns_one(self, rising_cube):
        # zero risky outputs mean everything stays in cash
        env, _ = reset(rising_cube, EnvConfig(horizon=3, costs=CostModel(0.01, 0.01)))
        assert rollout_return(env, NetworkParams.zeros(ARCH), 20) == 1.0

    def test_all_in_rising_asset(self, rising_cube):
        flat = np.zeros(NetworkParams.zeros(ARCH).size)
        params = NetworkParams.unflatten(ARCH, flat)
        arrays = list(params.arrays)
        arrays[3] = np.array([0.0, 50.0, 0.0, 0.0])  # tanh(50) == 1.0 in float64
        params = NetworkParams(ARCH, tuple(arrays))
        env, _ = reset(rising_cube, EnvConfig(horizon=3))
        assert rollout_return(env, params, 10) == pytest.approx(1.005**10, rel=1e-12)

    def test_recomposition(self, noisy_cube, rng):
        params = NetworkParams.unflatten(ARCH, 0.05 * rng.standard_normal(NetworkParams.zeros(ARCH).size))
        cfg = EnvConfig(horizon=3, costs=CostModel(0.0025, 0.0025))
        env, _ = reset(noisy_cube, cfg)
        info = rollout(env, params, 20)
        # rebuild the value from executed weights and price relatives alone;
        # each zeta agrees with the oracle to 1e-9, so allow that per step
        closes = noisy_cube.closes
        value, held = 1.0, np.eye(4)[0]
        for k, w in enumerate(info.weights):
            zeta = 1.0 if np.allclose(w, held, atol=0, rtol=0) else bisect_zeta(held, w, 0.0025, 0.0025)
            y = closes[:, 3 + k + 1] / closes[:, 3 + k]
            growth = float(w @ y)
            value *= zeta * growth
            held = w * y / growth
        assert info.final_value == pytest.approx(value, rel=20e-9)
        assert info.max_sum_error <= 4e-12

    def test_max_steps(self, noisy_cube):
        env, _ = reset(noisy_cube, EnvConfig(horizon=3, episode_cap=100))
        info = rollout(env, init_params(ARCH, 0), 7)
        assert len(info.weights) == 7

    def test_policy_action_is_valid(self, noisy_cube, rng):
        params = NetworkParams.unflatten(ARCH, 2 * rng.standard_normal(NetworkParams.zeros(ARCH).size))
        env, state = reset(noisy_cube, EnvConfig(horizon=3))
        w = policy_action(params, state, env.last_action)
        assert abs(w.sum() - 1) <= 4e-12 and np.all(np.abs(w[1:]) <= 1)


class TestTrainEs:
    ENV = EnvConfig(horizon=3, costs=CostModel(0.0, 0.0))
    CFG = EsConfig(population=8, iterations=3, max_steps=10, hidden=8, seed=5)

    def test_worker_invariance(self, noisy_cube):
        one = train_es(noisy_cube, self.ENV, self.CFG, train_end=100, workers=1)
        four = train_es(noisy_cube, self.ENV, self.CFG, train_end=100, workers=4)
        assert one.params.flatten().tobytes() == four.params.flatten().tobytes()
        assert one.history == four.history

    def test_never_backpropagates(self, noisy_cube, monkeypatch):
        def forbidden(*args, **kwargs):
            raise AssertionError("ES must not call backward")

        monkeypatch.setattr(neural, "backward", forbidden)
        res = train_es(noisy_cube, self.ENV, self.CFG, train_end=100)
        assert len(res.history) == 3

    def test_history_audit(self, noisy_cube):
        res = train_es(noisy_cube, self.ENV, self.CFG, train_end=100)
        for row in res.history:
            assert row["max_sum_error"] <= 4e-12
            assert -1 <= row["min_risky_weight"] <= row["max_risky_weight"] <= 1

    def test_arch_uses_amplification_offset(self, noisy_cube):
        arch = es_arch(noisy_cube, EnvConfig(horizon=3, K=50.0), self.CFG)
        assert arch.input_offset == 50.0 and arch.state_shape == (4, 3, 7)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            EsConfig(population=7)
        with pytest.raises(ValueError):
            EsConfig(sigma=0)
