"""Policy-gradient actor-critic with a Gaussian exploration policy.

The policy CNN outputs a mean allocation; actions are drawn from a diagonal
Gaussian around the risky part of that mean. A value CNN is regressed on
undiscounted reward-to-go, and the one-step advantage
``r + V(s') - V(s)`` weights the log-likelihood gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import neural
from .environment import EnvConfig, complete_weights, reset, step
from .market_data import FeatureCube
from .neural import Arch, NetworkParams
from .rng import make_rng

HISTORY_COLUMNS = ("update", "episode_return", "portfolio_value", "sigma", "value_mse")


class TrainingDiverged(FloatingPointError):
    pass


@dataclass(frozen=True)
class SigmaSchedule:
    """Exploration scale decaying linearly from ``initial`` to ``final``."""

    initial: float = 0.1
    final: float = 0.01
    decay_updates: int = 100

    def __post_init__(self):
        if self.initial <= 0 or self.final <= 0:
            raise ValueError("sigma must be > 0")
        if self.final > self.initial:
            raise ValueError("sigma schedule must be non-increasing")

    def __call__(self, update: int) -> float:
        if self.decay_updates <= 1:
            return self.final if update > 0 else self.initial
        frac = min(update / (self.decay_updates - 1), 1.0)
        return self.initial + (self.final - self.initial) * frac


@dataclass(frozen=True)
class GaussianPolicy:
    net: NetworkParams
    sigma: np.ndarray  # per risky action

    def mean(self, state, prev_weights) -> np.ndarray:
        mu, _ = neural.policy_cnn_forward(self.net, state, prev_weights)
        return mu


@dataclass
class Trajectory:
    states: np.ndarray
    prev_weights: np.ndarray
    actions: np.ndarray  # pre-clamp sampled risky actions
    rewards: np.ndarray
    next_states: np.ndarray
    executed: np.ndarray  # allocations actually submitted
    terminal: bool = True  # False when cut off by the episode cap (last step bootstraps)
    final_value: float = 1.0

    def __post_init__(self):
        T = len(self.rewards)
        if not (len(self.states) == len(self.prev_weights) == len(self.actions) == len(self.next_states) == T):
            raise ValueError("trajectory arrays have inconsistent lengths")

    def __len__(self):
        return len(self.rewards)

    @property
    def returns(self) -> np.ndarray:
        """Undiscounted reward-to-go."""
        return np.cumsum(self.rewards[::-1])[::-1]


def sample_action(mu, sigma, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``mu + sigma * z``; return the raw draw and its clamp to [-1, 1]."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.broadcast_to(np.asarray(sigma, dtype=np.float64), mu.shape)
    if np.any(sigma <= 0):
        raise ValueError("sigma must be > 0")
    raw = mu + sigma * rng.standard_normal(mu.shape)
    return raw, np.clip(raw, -1.0, 1.0)


def log_prob(mu_risky, action, sigma) -> float:
    mu_risky = np.asarray(mu_risky, dtype=np.float64)
    sigma = np.broadcast_to(np.asarray(sigma, dtype=np.float64), mu_risky.shape)
    z = (np.asarray(action) - mu_risky) / sigma
    return float(-0.5 * z @ z - np.log(sigma).sum() - 0.5 * len(z) * math.log(2 * math.pi))


def _score_upstream(mu: np.ndarray, actions: np.ndarray, sigma) -> np.ndarray:
    """d log pi / d mu for full-length network outputs; the riskless slot gets 0."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0):
        raise ValueError("sigma must be > 0")
    up = np.zeros_like(mu)
    up[..., 1:] = (actions - mu[..., 1:]) / sigma**2
    return up


def log_prob_grad(mu, action, sigma, record: neural.ForwardRecord) -> np.ndarray:
    """Gradient of ``log pi(action | s)`` w.r.t. the policy parameters.

    ``mu`` is the full network output for the recorded forward pass and
    ``action`` the (pre-clamp) risky action.
    """
    return neural.backward(record, _score_upstream(np.asarray(mu), np.asarray(action), sigma))


def advantage(reward: float, state, next_state, value_params: NetworkParams, terminal: bool = False) -> float:
    v_s, _ = neural.value_cnn_forward(value_params, state)
    v_next = 0.0 if terminal else neural.value_cnn_forward(value_params, next_state)[0]
    return reward + v_next - v_s


def batch_advantages(trajectories, value_params: NetworkParams) -> np.ndarray:
    out = []
    for traj in trajectories:
        v_s, _ = neural.value_cnn_forward(value_params, traj.states)
        v_next, _ = neural.value_cnn_forward(value_params, traj.next_states)
        if traj.terminal:
            v_next = v_next.copy()
            v_next[-1] = 0.0
        out.append(traj.rewards + v_next - v_s)
    return np.concatenate(out) if out else np.zeros(0)


def fit_value(trajectories, value_params: NetworkParams, epochs: int = 10, lr: float = 1e-3):
    """Full-batch gradient descent on the mean squared error to reward-to-go.

    Returns the new parameters and the final mean squared error.
    """
    states = np.concatenate([t.states for t in trajectories])
    targets = np.concatenate([t.returns for t in trajectories])
    flat = value_params.flatten()
    params = value_params
    for _ in range(epochs):
        v, rec = neural.value_cnn_forward(params, states)
        err = v - targets
        grad = neural.backward(rec, 2.0 * err / len(err))
        if not np.all(np.isfinite(grad)):
            raise TrainingDiverged("non-finite value-net gradient")
        flat = flat - lr * grad
        params = value_params.with_flat(flat)
    v, _ = neural.value_cnn_forward(params, states)
    mse = float(np.mean((v - targets) ** 2))
    if not math.isfinite(mse):
        raise TrainingDiverged("non-finite value loss")
    return params, mse


def policy_gradient(net: NetworkParams, states, prev_weights, actions, advantages, sigma) -> np.ndarray:
    """``(1/N) sum_i grad log pi(a_i|s_i) * A_i`` over a flat batch of steps."""
    mu, rec = neural.policy_cnn_forward(net, states, prev_weights)
    up = _score_upstream(mu, actions, sigma) * (np.asarray(advantages)[:, None] / len(mu))
    return neural.backward(rec, up)


def normalize(advantages: np.ndarray) -> np.ndarray:
    if len(advantages) < 2:
        return advantages
    centered = advantages - advantages.mean()
    std = centered.std()
    return centered / std if std > 0 else centered


def policy_update(trajectories, policy: GaussianPolicy, value_params: NetworkParams, alpha: float,
                  normalize_advantages: bool = True) -> NetworkParams:
    """One ascent step on the policy parameters."""
    adv = batch_advantages(trajectories, value_params)
    if normalize_advantages:
        adv = normalize(adv)
    states = np.concatenate([t.states for t in trajectories])
    prev = np.concatenate([t.prev_weights for t in trajectories])
    actions = np.concatenate([t.actions for t in trajectories])
    grad = policy_gradient(policy.net, states, prev, actions, adv, policy.sigma)
    if not np.all(np.isfinite(grad)):
        raise TrainingDiverged("non-finite policy gradient")
    return policy.net.with_flat(policy.net.flatten() + alpha * grad)


@dataclass(frozen=True)
class PgacConfig:
    episodes: int = 1600
    batch_size: int = 16
    alpha_policy: float = 1e-4
    alpha_value: float = 1e-3
    sigma_initial: float = 0.1
    sigma_final: float = 0.01
    sigma_decay_updates: int | None = None  # defaults to the number of updates
    value_epochs: int = 10
    normalize_advantages: bool = True
    activation: str = "tanh"
    seed: int = 0

    @property
    def n_updates(self) -> int:
        return math.ceil(self.episodes / self.batch_size) if self.episodes > 0 else 0

    def schedule(self) -> SigmaSchedule:
        horizon = self.sigma_decay_updates or max(self.n_updates, 1)
        return SigmaSchedule(self.sigma_initial, self.sigma_final, horizon)


@dataclass
class PgacResult:
    policy: NetworkParams
    value: NetworkParams
    sigma: float
    history: list[dict] = field(default_factory=list)


def pgac_archs(cube: FeatureCube, env_config: EnvConfig, activation: str = "tanh") -> tuple[Arch, Arch]:
    shape = dict(n_assets=cube.n_assets, horizon=env_config.horizon, n_features=cube.n_features,
                 activation=activation, input_offset=env_config.K)
    return Arch("pgac_policy", **shape), Arch("pgac_value", **shape)


def run_episode(cube: FeatureCube, env_config: EnvConfig, policy: GaussianPolicy, start: int, stop: int,
                rng: np.random.Generator) -> Trajectory:
    env, state = reset(cube, env_config, start=start, stop=stop)
    states, prevs, actions, rewards, nexts, executed = [], [], [], [], [], []
    done = wiped = False
    while not done:
        prev = env.last_action.copy()
        mu = policy.mean(state, prev)
        raw, clamped = sample_action(mu[1:], policy.sigma, rng)
        weights = complete_weights(clamped)
        res = step(env, weights)
        next_state = state if res.state is None else res.state
        states.append(state.entries)
        prevs.append(prev)
        actions.append(raw)
        rewards.append(res.reward)
        nexts.append(next_state.entries)
        executed.append(weights)
        state, done, wiped = next_state, res.done, res.state is None
    terminal = wiped or env.t >= env.cube.n_days - 1
    return Trajectory(np.array(states), np.array(prevs), np.array(actions), np.array(rewards),
                      np.array(nexts), np.array(executed), terminal=terminal, final_value=env.p)


def episode_starts(env_config: EnvConfig, train_end: int) -> tuple[int, int]:
    """Inclusive range of admissible episode start days inside ``[0, train_end)``."""
    lo = env_config.horizon
    hi = train_end - 1 - env_config.episode_cap
    if hi < lo:
        raise ValueError(
            f"training range of {train_end} days too short for horizon {env_config.horizon} "
            f"plus episode cap {env_config.episode_cap}"
        )
    return lo, hi


def train_pgac(cube: FeatureCube, env_config: EnvConfig, config: PgacConfig, train_end: int | None = None,
               policy: NetworkParams | None = None, value: NetworkParams | None = None) -> PgacResult:
    """Sample, fit the value net, estimate advantages, ascend the policy; repeat.

    Episodes run over random windows of ``episode_cap`` days inside
    ``[0, train_end)``. Each episode's randomness is keyed by
    ``(seed, update, episode)``, so results do not depend on rollout order.
    """
    train_end = cube.n_days if train_end is None else train_end
    lo, hi = episode_starts(env_config, train_end)
    p_arch, v_arch = pgac_archs(cube, env_config, config.activation)
    policy = policy or neural.init_params(p_arch, config.seed)
    value = value or neural.init_params(v_arch, config.seed + 1)
    schedule = config.schedule()
    n_risky = cube.n_assets - 1
    history = []
    sigma = schedule(0)
    for update in range(config.n_updates):
        sigma = schedule(update)
        gp = GaussianPolicy(policy, np.full(n_risky, sigma))
        batch = []
        n_eps = min(config.batch_size, config.episodes - update * config.batch_size)
        for ep in range(n_eps):
            rng = make_rng(config.seed, update, ep)
            start = int(rng.integers(lo, hi + 1))
            batch.append(run_episode(cube, env_config, gp, start, train_end - 1, rng))
        value, mse = fit_value(batch, value, config.value_epochs, config.alpha_value)
        policy = policy_update(batch, gp, value, config.alpha_policy, config.normalize_advantages)
        executed = np.concatenate([t.executed for t in batch])
        history.append({
            "update": update,
            "episode_return": float(np.mean([t.rewards.sum() for t in batch])),
            "portfolio_value": float(np.mean([t.final_value for t in batch])),
            "sigma": sigma,
            "value_mse": mse,
            "min_risky_weight": float(executed[:, 1:].min()),
            "max_risky_weight": float(executed[:, 1:].max()),
            "max_sum_error": float(np.abs(executed.sum(axis=1) - 1.0).max()),
        })
    return PgacResult(policy, value, sigma, history)
