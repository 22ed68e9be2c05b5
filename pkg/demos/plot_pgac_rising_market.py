"""
Actor-critic on a market with one winner
========================================

One asset gains 0.5% a day and the others are flat. A short actor-critic
run should learn to hold the winner; we compare the 10 test days against
holding cash and an equal-weight buy-and-hold.

Takes about 15 seconds.
"""

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from portfolio_rl import (
    DEFAULT_FEATURES,
    CostModel,
    EnvConfig,
    EqualWeightBuyHold,
    HoldRiskless,
    PgacAgent,
    PgacConfig,
    SyntheticSpec,
    build_feature_cube,
    generate_synthetic,
    metrics_report,
    run_backtest,
    train_pgac,
)

out = Path(__file__).with_name("_output")
out.mkdir(exist_ok=True)

spec = SyntheticSpec(mu=(math.log(1.005), 0.0, 0.0), sigma=(0.0, 0.0, 0.0), days=600)
cube = build_feature_cube(generate_synthetic(spec, 0), DEFAULT_FEATURES)
env = EnvConfig(horizon=50, costs=CostModel(0.0, 0.0), episode_cap=50)
train_end, window = 550, (550, 10)

# a larger step size than the library default; 320 episodes is a short run
result = train_pgac(cube, env, PgacConfig(episodes=320, batch_size=16, alpha_policy=1e-2, seed=0),
                    train_end=train_end)
for row in result.history[::4]:
    print(f"update {row['update']:3d}  sigma {row['sigma']:.3f}  mean episode value {row['portfolio_value']:.4f}")

# %%
# Held-out test window right after training.
fig, ax = plt.subplots(figsize=(7, 4))
for name, agent in [("pgac", PgacAgent(result.policy)), ("riskless", HoldRiskless()),
                    ("equal_weight", EqualWeightBuyHold())]:
    curve = run_backtest(agent, cube, window, env, train_end=train_end)
    print(name, metrics_report(curve, name))
    ax.plot(curve.values, label=name)
ax.legend()
ax.set_xlabel("test day")
fig.savefig(out / "pgac_rising_market.png", dpi=100)
