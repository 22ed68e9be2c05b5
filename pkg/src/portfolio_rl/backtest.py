"""Held-out backtests and report metrics.

Metrics are per period, with no annualization and a zero risk-free rate.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import neural
from .environment import EnvConfig, complete_weights, reset, riskless_weights, step
from .es import policy_action as es_policy_action
from .market_data import FeatureCube
from .neural import NetworkParams

TRADE_TOL = 1e-12
REPORT_FIELDS = ("trial", "final_value", "sharpe", "sortino", "mdd", "n_trades")
TABLE_COLUMNS = (("final_value", "Portfolio Value"), ("sortino", "Sortino Ratio"),
                 ("sharpe", "Sharpe Ratio"), ("mdd", "MMD"))


class MetricError(ValueError):
    pass


class WindowOverlap(ValueError):
    pass


# --- agents --------------------------------------------------------------

class PgacAgent:
    """Mean action of a trained policy CNN (no exploration noise)."""

    name = "pgac"

    def __init__(self, policy: NetworkParams):
        self.policy = policy

    def act(self, state, env) -> np.ndarray:
        mu, _ = neural.policy_cnn_forward(self.policy, state, env.last_action)
        return complete_weights(mu[1:])


class EsAgent:
    name = "es"

    def __init__(self, params: NetworkParams):
        self.params = params

    def act(self, state, env) -> np.ndarray:
        return es_policy_action(self.params, state, env.last_action)


class HoldRiskless:
    name = "riskless"

    def act(self, state, env) -> np.ndarray:
        return riskless_weights(env.cube.n_assets)


class EqualWeightBuyHold:
    """Equal weights on every asset at the first step, then no trading."""

    name = "equal_weight"

    def act(self, state, env) -> np.ndarray:
        if env.steps == 0:
            n = env.cube.n_assets
            return np.full(n, 1.0 / n)
        return env.w_drifted.copy()


class BestSingleAsset:
    """Hindsight baseline: fully in whichever asset gains most over the window."""

    name = "best_asset"

    def __init__(self):
        self.choice = None

    def prepare(self, cube: FeatureCube, first: int, last: int) -> None:
        closes = cube.closes
        self.choice = int(np.argmax(closes[:, last] / closes[:, first]))

    def act(self, state, env) -> np.ndarray:
        w = np.zeros(env.cube.n_assets)
        w[self.choice] = 1.0
        return w


BASELINES = {cls.name: cls for cls in (HoldRiskless, EqualWeightBuyHold, BestSingleAsset)}


# --- backtest --------------------------------------------------------------

@dataclass
class EquityCurve:
    values: np.ndarray
    returns: np.ndarray
    actions: np.ndarray
    zetas: np.ndarray
    growths: np.ndarray
    holdings: np.ndarray  # drifted weights at each close, row 0 = initial
    n_trades: int = 0
    wiped_out: bool = False
    dates: tuple[str, ...] = field(default=())


def run_backtest(agent, cube: FeatureCube, window: tuple[int, int], env_config: EnvConfig,
                 train_end: int | None = None) -> EquityCurve:
    """Roll ``agent`` deterministically over ``length`` days starting at day ``start``.

    The first allocation is made at the close of day ``start - 1``, so the
    curve has ``length + 1`` values with ``values[0] = 1``.
    """
    start, length = window
    if length < 1:
        raise ValueError("window length must be >= 1")
    if train_end is not None and start < train_end:
        raise WindowOverlap(f"test window starting at day {start} overlaps training data ending at {train_end}")
    if start < 1 or start + length > cube.n_days:
        raise ValueError(f"window {start}:{length} does not fit {cube.n_days} days of data")
    if hasattr(agent, "prepare"):
        agent.prepare(cube, start - 1, start + length - 1)
    cfg = replace(env_config, episode_cap=length)
    env, state = reset(cube, cfg, start=start - 1, stop=start + length - 1)
    values, actions, zetas, growths, holdings = [1.0], [], [], [], [env.w_drifted.copy()]
    n_trades = 0
    while not env.done:
        action = agent.act(state, env)
        if np.max(np.abs(action - env.w_drifted)) > TRADE_TOL:
            n_trades += 1
        res = step(env, action)
        values.append(res.p)
        actions.append(action)
        zetas.append(res.zeta)
        growths.append(res.growth)
        holdings.append(env.w_drifted.copy())
        state = res.state
    values = np.array(values)
    with np.errstate(divide="ignore"):
        returns = np.log(values[1:] / values[:-1])
    return EquityCurve(values, returns, np.array(actions), np.array(zetas), np.array(growths),
                       np.array(holdings), n_trades, bool(values[-1] <= 0),
                       tuple(cube.dates[start - 1 : start + length]) if cube.dates else ())


# --- metrics ---------------------------------------------------------------

def sharpe(returns) -> float:
    """Mean over sample standard deviation."""
    r = np.asarray(returns, dtype=np.float64)
    if len(r) < 2:
        raise MetricError("Sharpe needs at least two returns")
    sd = r.std(ddof=1)
    if sd == 0:
        raise MetricError("undefined Sharpe: zero variance")
    return float(r.mean() / sd)


def sortino(returns) -> float:
    """Mean over downside deviation ``sqrt(mean(min(r, 0)^2))``; ``inf`` with no down periods."""
    r = np.asarray(returns, dtype=np.float64)
    if len(r) < 2:
        raise MetricError("Sortino needs at least two returns")
    if not np.any(r):
        raise MetricError("undefined Sortino: all returns are zero")
    downside = math.sqrt(float(np.mean(np.minimum(r, 0.0) ** 2)))
    mean = float(r.mean())
    if downside == 0:
        return math.inf
    return mean / downside


def max_drawdown(values) -> float:
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise MetricError("empty equity curve")
    peak = np.maximum.accumulate(v)
    return float(np.max((peak - v) / peak))


@dataclass
class MetricsReport:
    trial: str
    final_value: float
    sharpe: float | None
    sortino: float | None
    mdd: float
    n_trades: int

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_dict(cls, payload: dict) -> "MetricsReport":
        missing = [k for k in REPORT_FIELDS if k not in payload]
        if missing:
            raise ValueError(f"report is missing {missing}")
        return cls(**{k: payload[k] for k in REPORT_FIELDS})


def _or_none(fn, returns):
    try:
        return fn(returns)
    except MetricError:
        return None


def metrics_report(curve: EquityCurve, trial: str = "1") -> MetricsReport:
    final = float(curve.values[-1] / curve.values[0])
    if curve.wiped_out:
        return MetricsReport(trial, final, None, None, 1.0, curve.n_trades)
    return MetricsReport(trial, final, _or_none(sharpe, curve.returns), _or_none(sortino, curve.returns),
                         max_drawdown(curve.values), curve.n_trades)


def equity_csv(curve: EquityCurve) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    n = curve.holdings.shape[1]
    writer.writerow(["day", "value", *(f"weight_{i}" for i in range(n))])
    for day, (value, w) in enumerate(zip(curve.values, curve.holdings)):
        writer.writerow([day, repr(float(value)), *(repr(float(x)) for x in w)])
    return buf.getvalue()


# --- comparison --------------------------------------------------------------

def _mean(xs):
    xs = [x for x in xs if x is not None]
    return float(np.mean(xs)) if xs else None


def compare(reports) -> list[dict]:
    """One row per report plus a ``mean`` row when there is more than one.

    ``reports`` is a sequence of ``MetricsReport`` or ``(label, MetricsReport)``.
    """
    rows = []
    for item in reports:
        label, rep = item if isinstance(item, tuple) else (item.trial, item)
        rows.append({"trial": label, **{k: getattr(rep, k) for k, _ in TABLE_COLUMNS}, "n_trades": rep.n_trades})
    if not rows:
        raise ValueError("nothing to compare")
    if len(rows) > 1:
        mean_row = {"trial": "mean", **{k: _mean([r[k] for r in rows]) for k, _ in TABLE_COLUMNS}}
        mean_row["n_trades"] = _mean([r["n_trades"] for r in rows])
        rows.append(mean_row)
    return rows


def _fmt(key, value):
    if value is None:
        return ""
    if key == "mdd":
        return f"{100 * value:.3f} %"
    if key == "n_trades":
        return f"{value:g}"
    return f"{value:.3f}" if math.isfinite(value) else str(value)


def comparison_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["Trial", *(title for _, title in TABLE_COLUMNS), "Trades"])
    for row in rows:
        writer.writerow([row["trial"], *(_fmt(k, row[k]) for k, _ in TABLE_COLUMNS), _fmt("n_trades", row["n_trades"])])
    return buf.getvalue()


def comparison_json(rows: list[dict]) -> str:
    return json.dumps(rows, indent=1) + "\n"


def load_report(path) -> MetricsReport:
    return MetricsReport.from_dict(json.loads(Path(path).read_text()))
