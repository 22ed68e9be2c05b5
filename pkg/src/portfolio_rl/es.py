"""Evolution strategy over flat parameter vectors.

The objective is smoothed with isotropic Gaussian noise and its gradient is
estimated from fitness evaluations alone::

    grad ~= 1 / (N * sigma) * sum_k shaped(F_k) * sign_k * eps_k

Each ``eps_k`` is regenerated from an integer seed, so workers exchange
only seeds and scalar fitnesses. Contributions are summed in task order,
which makes the update bit-identical for any number of workers.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import rankdata

from . import neural
from .environment import EnvConfig, complete_weights, reset, step
from .market_data import FeatureCube
from .neural import Arch, NetworkParams
from .rng import make_rng

HISTORY_COLUMNS = ("iteration", "mean_fitness", "best_fitness", "grad_norm")


@dataclass(frozen=True)
class EsConfig:
    sigma: float = 0.1
    population: int = 64
    learning_rate: float = 0.02
    iterations: int = 200
    antithetic: bool = True
    rank_shaping: bool = True
    max_steps: int = 50
    log_fitness: bool = False
    hidden: int = 32
    activation: str = "tanh"
    seed: int = 0

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")
        if self.population < 2:
            raise ValueError("population must be >= 2")
        if self.antithetic and self.population % 2:
            raise ValueError("antithetic sampling needs an even population")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


@dataclass(frozen=True)
class WorkerTask:
    index: int
    seed: tuple[int, ...]
    sign: int = 1


def noise(seed, dim: int) -> np.ndarray:
    seed = (seed,) if isinstance(seed, (int, np.integer)) else tuple(seed)
    return make_rng(*seed).standard_normal(dim)


def perturb_flat(theta: np.ndarray, seed, sign: int, sigma: float) -> np.ndarray:
    return theta + (sign * sigma) * noise(seed, theta.size)


def perturb(params: NetworkParams, seed, sign: int, sigma: float) -> NetworkParams:
    """``theta + sign * sigma * eps`` with ``eps`` generated from ``seed`` alone."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    return params.with_flat(perturb_flat(params.flatten(), seed, sign, sigma))


def make_tasks(config: EsConfig, iteration: int) -> list[WorkerTask]:
    if config.antithetic:
        return [WorkerTask(2 * j + h, (config.seed, iteration, j), 1 - 2 * h)
                for j in range(config.population // 2) for h in (0, 1)]
    return [WorkerTask(k, (config.seed, iteration, k), 1) for k in range(config.population)]


def centered_ranks(fitnesses) -> np.ndarray:
    """Ranks mapped linearly onto [-0.5, 0.5]; ties share their average rank."""
    f = np.asarray(fitnesses, dtype=np.float64)
    if len(f) < 2:
        return np.zeros_like(f)
    return (rankdata(f, method="average") - 1.0) / (len(f) - 1) - 0.5


def shape_fitness(fitnesses, rank_shaping: bool) -> np.ndarray:
    f = np.asarray(fitnesses, dtype=np.float64)
    return centered_ranks(f) if rank_shaping else f - f.mean()


def es_gradient(fitnesses, seeds, signs, sigma: float, dim: int, rank_shaping: bool = True) -> np.ndarray:
    """Monte-Carlo gradient of the smoothed objective, accumulated in the given order."""
    if len(fitnesses) < 2:
        raise ValueError("need at least two fitness values")
    weights = shape_fitness(fitnesses, rank_shaping)
    grad = np.zeros(dim)
    for w, seed, sign in zip(weights, seeds, signs):
        if w != 0:
            grad += (w * sign) * noise(seed, dim)
    return grad / (len(weights) * sigma)


_WORKER_FITNESS = None


def _init_worker(fitness):
    global _WORKER_FITNESS
    _WORKER_FITNESS = fitness


def _eval_task(args):
    theta, seed, sign, sigma = args
    return _WORKER_FITNESS(perturb_flat(theta, seed, sign, sigma))


def _fitness_value(result) -> float:
    return float(getattr(result, "fitness", result))


def es_optimize(fitness, theta0, config: EsConfig, workers: int = 1, callback=None):
    """Ascend ``fitness`` (a picklable callable on flat vectors) from ``theta0``.

    Returns ``(theta, history)``. ``callback(iteration, theta, results)`` is
    invoked after every update when given.
    """
    theta = np.array(theta0, dtype=np.float64)
    history = []
    pool = None
    if workers > 1:
        pool = ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(fitness,))
    else:
        _init_worker(fitness)
    try:
        for it in range(config.iterations):
            tasks = make_tasks(config, it)
            args = [(theta, t.seed, t.sign, config.sigma) for t in tasks]
            if pool is None:
                results = [_eval_task(a) for a in args]
            else:
                chunk = math.ceil(len(args) / workers)
                results = list(pool.map(_eval_task, args, chunksize=chunk))
            fits = np.array([_fitness_value(r) for r in results])
            grad = es_gradient(fits, [t.seed for t in tasks], [t.sign for t in tasks], config.sigma,
                               theta.size, config.rank_shaping)
            theta = theta + config.learning_rate * grad
            row = {"iteration": it, "mean_fitness": float(fits.mean()), "best_fitness": float(fits.max()),
                   "grad_norm": float(np.linalg.norm(grad))}
            audits = [r for r in results if hasattr(r, "min_risky_weight")]
            if audits:
                row["min_risky_weight"] = min(r.min_risky_weight for r in audits)
                row["max_risky_weight"] = max(r.max_risky_weight for r in audits)
                row["max_sum_error"] = max(r.max_sum_error for r in audits)
            history.append(row)
            if callback is not None:
                callback(it, theta, results)
    finally:
        if pool is not None:
            pool.shutdown()
    return theta, history


@dataclass(frozen=True)
class RolloutInfo:
    fitness: float
    final_value: float
    min_risky_weight: float
    max_risky_weight: float
    max_sum_error: float
    weights: np.ndarray = field(repr=False, default=None)


def policy_action(params: NetworkParams, state, prev_weights) -> np.ndarray:
    """Deterministic allocation: network output with the riskless slot replaced by the residual."""
    out, _ = neural.es_mlp_forward(params, state, prev_weights)
    return complete_weights(out[1:])


def rollout(env, params: NetworkParams, max_steps: int, state=None, log_fitness: bool = False,
            reward_floor: float = -10.0) -> RolloutInfo:
    state = env.observe() if state is None else state
    executed = []
    for _ in range(max_steps):
        if env.done:
            break
        weights = policy_action(params, state, env.last_action)
        executed.append(weights)
        res = step(env, weights)
        state = res.state
    executed = np.array(executed)
    final = env.p
    if log_fitness:
        fit = math.log(final) if final > 0 else reward_floor
    else:
        fit = final
    return RolloutInfo(fit, final, float(executed[:, 1:].min()), float(executed[:, 1:].max()),
                       float(np.abs(executed.sum(axis=1) - 1.0).max()), executed)


def rollout_return(env, params: NetworkParams, max_steps: int = 50) -> float:
    """Final-to-initial portfolio value ratio of a noise-free rollout (0 on wipe-out)."""
    p0 = env.p
    return rollout(env, params, max_steps).final_value / p0


@dataclass(frozen=True)
class RolloutFitness:
    """Picklable fitness: run the ES policy over a fixed training window."""

    cube: FeatureCube
    env_config: EnvConfig
    arch: Arch
    start: int
    stop: int
    max_steps: int
    log_fitness: bool = False

    def __call__(self, theta) -> RolloutInfo:
        env, state = reset(self.cube, self.env_config, start=self.start, stop=self.stop)
        params = NetworkParams.unflatten(self.arch, theta)
        info = rollout(env, params, self.max_steps, state, self.log_fitness, self.env_config.reward_floor)
        return RolloutInfo(info.fitness, info.final_value, info.min_risky_weight, info.max_risky_weight,
                           info.max_sum_error)


def es_arch(cube: FeatureCube, env_config: EnvConfig, config: EsConfig) -> Arch:
    return Arch("es_mlp", cube.n_assets, env_config.horizon, cube.n_features, hidden=config.hidden,
                activation=config.activation, input_offset=env_config.K)


@dataclass
class EsResult:
    params: NetworkParams
    history: list[dict]


def train_es(cube: FeatureCube, env_config: EnvConfig, config: EsConfig, train_end: int | None = None,
             workers: int = 1, params: NetworkParams | None = None) -> EsResult:
    """Train the MLP policy on the last ``max_steps`` days before ``train_end``."""
    train_end = cube.n_days if train_end is None else train_end
    stop = train_end - 1
    start = max(stop - config.max_steps, env_config.horizon)
    if start >= stop:
        raise ValueError("training range too short for the ES rollout window")
    env_config = replace(env_config, episode_cap=config.max_steps)
    arch = es_arch(cube, env_config, config)
    params = params or neural.init_params(arch, config.seed)
    fitness = RolloutFitness(cube, env_config, arch, start, stop, config.max_steps, config.log_fitness)
    theta, history = es_optimize(fitness, params.flatten(), config, workers)
    return EsResult(params.with_flat(theta), history)
