"""Trading environment with proportional buy/sell costs and short positions.

One step is: rebalance from the drifted holdings to the submitted weights
(paying costs, which shrink portfolio value by a factor ``zeta``), then let
the next day's price relatives drift the weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize

from .market_data import DEFAULT_K, FeatureCube, StateTensor, amplify_state

WEIGHT_TOL = 1e-12
REWARD_FORMS = ("cost_in_value", "literal_scaling")
SHORT_COST_MODES = ("paper_positive_part", "absolute_turnover")


class WipeOut(ArithmeticError):
    """Portfolio growth factor fell to zero or below."""


class CostModelInfeasible(ArithmeticError):
    pass


class EpisodeDone(RuntimeError):
    pass


@dataclass(frozen=True)
class CostModel:
    c_p: float = 0.0
    c_s: float = 0.0
    short_cost_mode: str = "paper_positive_part"

    def __post_init__(self):
        if not (0 <= self.c_p < 1 and 0 <= self.c_s < 1):
            raise ValueError("cost rates must lie in [0, 1)")
        if self.short_cost_mode not in SHORT_COST_MODES:
            raise ValueError(f"short_cost_mode must be one of {SHORT_COST_MODES}")


@dataclass(frozen=True)
class EnvConfig:
    horizon: int = 50
    K: float = DEFAULT_K
    costs: CostModel = field(default_factory=CostModel)
    reward_form: str = "cost_in_value"
    episode_cap: int = 50
    reward_floor: float = -10.0

    def __post_init__(self):
        if self.reward_form not in REWARD_FORMS:
            raise ValueError(f"reward_form must be one of {REWARD_FORMS}")
        if self.horizon < 1 or self.episode_cap < 1:
            raise ValueError("horizon and episode_cap must be >= 1")


def complete_weights(risky) -> np.ndarray:
    """Prepend the riskless weight ``1 - sum(risky)``."""
    risky = np.asarray(risky, dtype=np.float64)
    if np.any(np.abs(risky) > 1):
        raise ValueError("risky weights must lie in [-1, 1]")
    return np.concatenate([[1.0 - risky.sum()], risky])


def check_allocation(w: np.ndarray) -> None:
    """Raise if ``w`` is not an executable allocation."""
    if abs(w.sum() - 1.0) > WEIGHT_TOL * len(w):
        raise ValueError(f"weights sum to {w.sum()!r}, not 1")
    if np.any(np.abs(w[1:]) > 1):
        raise ValueError("risky weights must lie in [-1, 1]")


def drift_weights(w, y) -> tuple[np.ndarray, float]:
    """Weights after prices move by relatives ``y``, and the growth ``w . y``."""
    w = np.asarray(w, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    growth = float(w @ y)
    if growth <= 0:
        raise WipeOut(f"portfolio growth factor {growth} <= 0")
    return w * y / growth, growth


def shrinkage_rhs(zeta: float, w_prime: np.ndarray, w_target: np.ndarray, costs: CostModel) -> float:
    """Right-hand side of the cost fixed-point equation at ``zeta``."""
    c_p, c_s = costs.c_p, costs.c_s
    diff = w_prime[1:] - zeta * w_target[1:]
    if costs.short_cost_mode == "paper_positive_part":
        turnover = float(np.maximum(diff, 0.0).sum())
    else:
        turnover = float(np.abs(diff).sum())
    return (1.0 - c_p * w_prime[0] - (c_s + c_p - c_s * c_p) * turnover) / (1.0 - c_p * w_target[0])


def cost_shrinkage(w_prime, w_target, costs: CostModel, tol: float = 1e-10, max_iter: int = 200) -> float:
    """Fraction of portfolio value left after rebalancing from ``w_prime`` to ``w_target``.

    Solved by the damped iteration ``zeta <- (zeta + rhs(zeta)) / 2`` from 1,
    falling back to bisection on [0, 1] if it does not settle.
    """
    w_prime = np.asarray(w_prime, dtype=np.float64)
    w_target = np.asarray(w_target, dtype=np.float64)
    if costs.c_p == 0 and costs.c_s == 0:
        return 1.0
    if 1.0 - costs.c_p * w_target[0] <= 0:
        raise CostModelInfeasible("cost model infeasible: riskless weight too large for c_p")

    def residual(z):
        return z - shrinkage_rhs(z, w_prime, w_target, costs)

    zeta = 1.0
    for _ in range(max_iter):
        rhs = shrinkage_rhs(zeta, w_prime, w_target, costs)
        if abs(zeta - rhs) < tol and 0 < zeta <= 1:
            return zeta
        zeta = 0.5 * zeta + 0.5 * rhs

    lo, hi = 0.0, 1.0
    if residual(hi) == 0:
        return 1.0
    if residual(lo) * residual(hi) > 0:
        raise CostModelInfeasible("cost model infeasible: no shrinkage factor in (0, 1]")
    zeta = optimize.bisect(residual, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    if zeta <= 0 or abs(residual(zeta)) >= tol:
        raise CostModelInfeasible("cost model infeasible: bisection did not converge")
    return min(zeta, 1.0)


def log_return(p_new: float, p_old: float) -> float:
    if p_new <= 0 or p_old <= 0:
        raise ValueError("portfolio values must be positive")
    return math.log(p_new / p_old)


@dataclass(frozen=True)
class StepResult:
    state: StateTensor | None
    reward: float
    zeta: float
    done: bool
    p: float
    growth: float = 1.0
    weights: np.ndarray | None = None  # executed allocation


@dataclass
class EnvState:
    """Mutable episode state; owned by a single caller."""

    cube: FeatureCube
    config: EnvConfig
    t: int
    stop: int  # last day index the episode may reach
    p: float = 1.0
    w_drifted: np.ndarray = None
    last_action: np.ndarray = None
    steps: int = 0
    done: bool = False

    def observe(self) -> StateTensor:
        return amplify_state(self.cube, self.t, self.config.horizon, self.config.K)

    def copy(self) -> "EnvState":
        return replace(self, w_drifted=self.w_drifted.copy(), last_action=self.last_action.copy())


def riskless_weights(n: int) -> np.ndarray:
    w = np.zeros(n)
    w[0] = 1.0
    return w


def reset(cube: FeatureCube, config: EnvConfig, start: int | None = None, stop: int | None = None):
    """Start an episode at day ``start`` (default ``horizon``) fully in the riskless asset.

    ``stop`` bounds the last day whose price the episode may use; it defaults
    to the end of the cube. Returns ``(env, initial_state)``.
    """
    start = config.horizon if start is None else int(start)
    stop = cube.n_days - 1 if stop is None else int(stop)
    if stop > cube.n_days - 1:
        raise ValueError("stop beyond end of data")
    if start < 0 or start >= stop:
        raise ValueError(
            f"insufficient data: need a start day >= 0 and at least one step before day {stop} "
            f"(cube has {cube.n_days} days, horizon {config.horizon})"
        )
    n = cube.n_assets
    env = EnvState(cube, config, t=start, stop=stop, w_drifted=riskless_weights(n), last_action=riskless_weights(n))
    return env, env.observe()


def step(env: EnvState, action) -> StepResult:
    """Execute allocation ``action`` at day ``env.t`` and advance one day."""
    if env.done:
        raise EpisodeDone("step called on a finished episode")
    action = np.asarray(action, dtype=np.float64)
    check_allocation(action)
    cfg = env.config
    closes = env.cube.closes
    zeta = cost_shrinkage(env.w_drifted, action, cfg.costs)
    y = closes[:, env.t + 1] / closes[:, env.t]
    env.t += 1
    env.steps += 1
    env.last_action = action.copy()
    try:
        w_new, growth = drift_weights(action, y)
    except WipeOut:
        env.p = 0.0
        env.done = True
        return StepResult(None, cfg.reward_floor, zeta, True, 0.0, float(action @ y), action)

    p_old = env.p
    if cfg.reward_form == "cost_in_value":
        env.p = p_old * zeta * growth
        reward = log_return(env.p, p_old)
    else:
        env.p = p_old * growth
        reward = zeta * math.log(growth)
    env.w_drifted = w_new
    env.done = env.t >= env.stop or env.steps >= cfg.episode_cap
    return StepResult(env.observe(), reward, zeta, env.done, env.p, growth, action)
