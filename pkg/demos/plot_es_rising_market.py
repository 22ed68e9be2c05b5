"""
Evolution strategy on the same market
=====================================

The ES agent is a small MLP over a 3-day window. Only fitness values are
exchanged between rollouts; every perturbation is regenerated from its
seed. Perturbed policies go short now and then while exploring.

Takes about 15 seconds.
"""

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from portfolio_rl import (
    DEFAULT_FEATURES,
    CostModel,
    EnvConfig,
    EsAgent,
    EsConfig,
    SyntheticSpec,
    build_feature_cube,
    generate_synthetic,
    run_backtest,
    train_es,
)

out = Path(__file__).with_name("_output")
out.mkdir(exist_ok=True)

spec = SyntheticSpec(mu=(math.log(1.005), 0.0, 0.0), sigma=(0.0, 0.0, 0.0), days=600)
cube = build_feature_cube(generate_synthetic(spec, 0), DEFAULT_FEATURES)
env = EnvConfig(horizon=3, costs=CostModel(0.0, 0.0))

result = train_es(cube, env, EsConfig(iterations=60, seed=0), train_end=550)
hist = result.history
print("lowest risky weight tried during training:", min(r["min_risky_weight"] for r in hist))

# flat assets earn nothing and trading is free here, so the policy is
# indifferent to them; any position in them is financed by a negative cash residual
curve = run_backtest(EsAgent(result.params), cube, (550, 10), env, train_end=550)
print("test weights (CASH, rising, flat, flat):")
print(np.round(curve.actions, 3))
print("test value:", curve.values[-1])

fig, ax = plt.subplots(figsize=(7, 4))
ax.plot([r["mean_fitness"] for r in hist], label="mean fitness")
ax.plot([r["best_fitness"] for r in hist], label="best fitness")
ax.set_xlabel("iteration")
ax.legend()
fig.savefig(out / "es_rising_market.png", dpi=100)
