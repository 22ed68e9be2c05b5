"""Run configuration: a versioned JSON document with every default written out."""

from __future__ import annotations

import copy
import json
import os
from dataclasses import asdict, fields
from pathlib import Path

from .environment import CostModel, EnvConfig
from .es import EsConfig
from .market_data import DEFAULT_FEATURES, PriceSeries, SyntheticSpec, generate_synthetic, load_ohlcv
from .pgac import PgacConfig

SCHEMA_VERSION = 1
OUTPUT_ENV_VAR = "PORTFOLIO_RL_OUTPUT"

DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "data": {
        "csv": None,
        "synthetic": {
            "mu": [0.0005, 0.0003, 0.0],
            "sigma": [0.01, 0.015, 0.02],
            "days": 600,
            "names": ["A1", "A2", "A3"],
            "start_price": 1.0,
            "start_date": "2000-01-03",
            "seed": 0,
        },
    },
    "features": list(DEFAULT_FEATURES),
    "horizon": 50,
    "K": 100.0,
    "costs": {"c_p": 0.0025, "c_s": 0.0025, "short_cost_mode": "paper_positive_part"},
    "reward_form": "cost_in_value",
    "reward_floor": -10.0,
    "episode_cap": 50,
    "train_days": 500,
    "test_days": 10,
    "seed": 0,
    "output_dir": None,
    "pgac": {k: v for k, v in asdict(PgacConfig()).items() if k != "seed"},
    "es": {"horizon": 3, **{k: v for k, v in asdict(EsConfig()).items() if k != "seed"}},
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {path + key!r}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = _merge(base[key], value, f"{path}{key}.")
        else:
            out[key] = value
    return out


def resolve(override: dict | None = None) -> dict:
    """Defaults overlaid with ``override``; unknown keys are rejected."""
    override = override or {}
    version = override.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version}")
    cfg = _merge(DEFAULTS, override)
    if cfg["output_dir"] is None:
        cfg["output_dir"] = os.environ.get(OUTPUT_ENV_VAR, "runs")
    return cfg


def load(path) -> dict:
    try:
        return resolve(json.loads(Path(path).read_text()))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def dumps(cfg: dict) -> str:
    return json.dumps(cfg, sort_keys=True, indent=1) + "\n"


def synthetic_spec(cfg: dict) -> tuple[SyntheticSpec, int]:
    syn = dict(cfg["data"]["synthetic"])
    seed = syn.pop("seed")
    syn["names"] = tuple(syn.get("names") or ())
    syn["mu"], syn["sigma"] = tuple(syn["mu"]), tuple(syn["sigma"])
    return SyntheticSpec(**syn), seed


def load_series(cfg: dict) -> PriceSeries:
    if cfg["data"]["csv"]:
        return load_ohlcv(cfg["data"]["csv"])
    spec, seed = synthetic_spec(cfg)
    return generate_synthetic(spec, seed)


def env_config(cfg: dict, agent: str = "pgac") -> EnvConfig:
    horizon = cfg["es"]["horizon"] if agent == "es" else cfg["horizon"]
    cap = cfg["es"]["max_steps"] if agent == "es" else cfg["episode_cap"]
    return EnvConfig(horizon=horizon, K=cfg["K"], costs=CostModel(**cfg["costs"]),
                     reward_form=cfg["reward_form"], episode_cap=cap, reward_floor=cfg["reward_floor"])


def pgac_config(cfg: dict) -> PgacConfig:
    return PgacConfig(seed=cfg["seed"], **cfg["pgac"])


def es_config(cfg: dict) -> EsConfig:
    names = {f.name for f in fields(EsConfig)}
    return EsConfig(seed=cfg["seed"], **{k: v for k, v in cfg["es"].items() if k in names})


def train_end(cfg: dict, n_days: int) -> int:
    """Exclusive end of the training days; the test window starts here."""
    end = cfg["horizon"] + cfg["train_days"]
    if end + cfg["test_days"] > n_days:
        raise ConfigError(
            f"{n_days} days of data cannot hold {cfg['horizon']} warm-up + {cfg['train_days']} training "
            f"+ {cfg['test_days']} test days"
        )
    return end
