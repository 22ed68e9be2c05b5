"""Command-line entry point: ``ingest``, ``train``, ``backtest``, ``compare``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import backtest, config, neural
from .es import HISTORY_COLUMNS as ES_COLUMNS, train_es
from .market_data import DataError, build_feature_cube, write_ohlcv
from .pgac import HISTORY_COLUMNS as PGAC_COLUMNS, train_pgac

CHECKPOINT_FORMAT = "portfolio_rl.checkpoint"
CHECKPOINT_VERSION = 1


def _write_history(path: Path, rows: list[dict], columns) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in columns])


def _provenance(cfg: dict) -> dict:
    """Config as embedded in artifacts; the output location is not part of a run's identity."""
    return {k: v for k, v in cfg.items() if k != "output_dir"}


def _load_config(args) -> dict:
    cfg = config.load(args.config) if getattr(args, "config", None) else config.resolve()
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "out", None):
        cfg["output_dir"] = args.out
    return cfg


def _cube(cfg: dict):
    series = config.load_series(cfg)
    return series, build_feature_cube(series, cfg["features"])


def cmd_ingest(args) -> int:
    cfg = _load_config(args)
    if args.csv:
        cfg["data"]["csv"] = args.csv
    series, cube = _cube(cfg)
    closes = series.closes
    print(f"assets: {series.n_assets} ({', '.join(series.assets)}; index 0 riskless)")
    print(f"days: {series.n_days} ({series.dates[0]} .. {series.dates[-1]})")
    print(f"features ({cube.n_features}): {', '.join(cube.feature_names)}")
    for i, name in enumerate(series.assets):
        c = closes[i]
        print(f"  {name:>8}: close min {c.min():.4f} max {c.max():.4f} last {c[-1]:.4f}")
    if args.write_csv:
        write_ohlcv(series, args.write_csv)
        print(f"wrote {args.write_csv}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    _, cube = _cube(cfg)
    end = config.train_end(cfg, cube.n_days)
    env_cfg = config.env_config(cfg, args.agent)
    lineage = {"master_seed": cfg["seed"], "data_seed": cfg["data"]["synthetic"]["seed"]}
    if args.agent == "pgac":
        result = train_pgac(cube, env_cfg, config.pgac_config(cfg), train_end=end)
        networks = {"policy": neural.params_to_dict(result.policy, {**lineage, "init": "seed"}),
                    "value": neural.params_to_dict(result.value, {**lineage, "init": "seed+1"})}
        extra = {"sigma": result.sigma}
        history, columns = result.history, PGAC_COLUMNS
    else:
        result = train_es(cube, env_cfg, config.es_config(cfg), train_end=end, workers=args.workers)
        networks = {"policy": neural.params_to_dict(result.params, {**lineage, "init": "seed"})}
        extra = {}
        history, columns = result.history, ES_COLUMNS
    checkpoint = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, "agent": args.agent,
                  "train_end": end, "config": _provenance(cfg), "networks": networks, **extra}
    (out / "checkpoint.json").write_text(neural.dumps(checkpoint))
    (out / "config.json").write_text(config.dumps(cfg))
    _write_history(out / "history.csv", history, columns)
    print(f"wrote {out / 'checkpoint.json'}")
    return 0


def load_checkpoint(path) -> dict:
    payload = json.loads(Path(path).read_text())
    if payload.get("format") != CHECKPOINT_FORMAT or payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path} is not a supported checkpoint")
    return payload


def _parse_window(text: str) -> tuple[int, int]:
    try:
        start, length = (int(x) for x in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError("window must be START:LENGTH") from None
    return start, length


def cmd_backtest(args) -> int:
    if args.checkpoint:
        ckpt = load_checkpoint(args.checkpoint)
        cfg = config.resolve(ckpt["config"])
        agent_name = ckpt["agent"]
        policy = neural.params_from_dict(ckpt["networks"]["policy"])
        agent = backtest.PgacAgent(policy) if agent_name == "pgac" else backtest.EsAgent(policy)
    else:
        cfg = _load_config(args)
        agent_name = args.baseline
        agent = backtest.BASELINES[args.baseline]()
    if args.out:
        cfg["output_dir"] = args.out
    if args.test_days is not None:
        cfg["test_days"] = args.test_days
    _, cube = _cube(cfg)
    end = config.train_end(cfg, cube.n_days)
    window = args.window or (end, cfg["test_days"])
    env_cfg = config.env_config(cfg, agent_name if agent_name in ("pgac", "es") else "pgac")
    curve = backtest.run_backtest(agent, cube, window, env_cfg, train_end=end)
    report = backtest.metrics_report(curve, args.trial or agent_name)
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    payload = {**report.to_dict(), "agent": agent_name, "window": list(window), "config": _provenance(cfg)}
    (out / "report.json").write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")
    (out / "equity.csv").write_text(backtest.equity_csv(curve))
    print(json.dumps(report.to_dict(), sort_keys=True))
    return 0


def cmd_compare(args) -> int:
    reports = []
    for path in args.reports:
        payload = json.loads(Path(path).read_text())
        rep = backtest.MetricsReport.from_dict(payload)
        agent = payload.get("agent")
        label = f"{agent}:{rep.trial}" if agent and agent != rep.trial else rep.trial
        reports.append((label, rep))
    rows = backtest.compare(reports)
    text = backtest.comparison_csv(rows)
    if args.out:
        Path(args.out).write_text(text)
        Path(args.out).with_suffix(".json").write_text(backtest.comparison_json(rows))
    print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="portfolio-rl", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load or synthesize market data and summarize it")
    p.add_argument("--config")
    p.add_argument("--csv", help="OHLCV CSV file (overrides the config data source)")
    p.add_argument("--synthetic", action="store_true", help="use the config's synthetic market (default)")
    p.add_argument("--write-csv", help="write the loaded/generated series as CSV")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train an agent and write a checkpoint")
    p.add_argument("--agent", choices=("pgac", "es"), required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, default=1, help="parallel ES rollout workers")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("backtest", help="evaluate a checkpoint or baseline on the test window")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint")
    src.add_argument("--baseline", choices=sorted(backtest.BASELINES))
    p.add_argument("--config", help="run config (baselines only; checkpoints carry their own)")
    p.add_argument("--window", type=_parse_window, help="START:LENGTH in day indices")
    p.add_argument("--test-days", type=int, help="test window length right after training")
    p.add_argument("--trial", help="trial label for the report")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_backtest)

    p = sub.add_parser("compare", help="tabulate report JSON files")
    p.add_argument("reports", nargs="+")
    p.add_argument("--out", help="write the table as CSV (and JSON alongside)")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (DataError, config.ConfigError, backtest.WindowOverlap, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
