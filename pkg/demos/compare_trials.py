"""
Several trials in one table
===========================

Drive the command line end to end: train two ES seeds on a noisy synthetic
market with costs, backtest each and a cash baseline, and tabulate them.
Run from any directory; outputs land in ``demos/_output/trials``.
"""

import json
from pathlib import Path

from portfolio_rl.cli import main

out = Path(__file__).with_name("_output") / "trials"
out.mkdir(parents=True, exist_ok=True)

cfg = out / "config.json"
cfg.write_text(json.dumps({"es": {"iterations": 20, "population": 32}}))

reports = []
for seed in (1, 2):
    run_dir = out / f"es-{seed}"
    main(["train", "--agent", "es", "--config", str(cfg), "--seed", str(seed), "--out", str(run_dir)])
    main(["backtest", "--checkpoint", str(run_dir / "checkpoint.json"), "--trial", str(seed),
          "--out", str(run_dir / "test")])
    reports.append(str(run_dir / "test" / "report.json"))

main(["backtest", "--baseline", "riskless", "--config", str(cfg), "--out", str(out / "cash")])
reports.append(str(out / "cash" / "report.json"))

# one row per trial plus the mean
main(["compare", *reports, "--out", str(out / "table.csv")])
