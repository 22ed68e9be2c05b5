"""
Transaction costs as value shrinkage
====================================

Rebalancing multiplies the portfolio value by a factor zeta <= 1 that is
defined implicitly. We solve it for a few trades, then watch a strategy
that rotates between two assets every day bleed value on flat prices.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from portfolio_rl import CostModel, EnvConfig, FeatureCube, cost_shrinkage, run_backtest

out = Path(__file__).with_name("_output")
out.mkdir(exist_ok=True)

costs = CostModel(c_p=0.0025, c_s=0.0025)
w_held = np.array([0.5, 0.5, 0.0, 0.0])
for target in ([0.5, 0.5, 0.0, 0.0], [0.0, 0.0, 0.5, 0.5], [0.0, 1.0, 0.0, 0.0], [2.0, -1.0, 0.0, 0.0]):
    z = cost_shrinkage(w_held, np.array(target), costs)
    print(f"{w_held} -> {target}: zeta = {z:.9f}")

# the positive-part turnover only charges assets that are sold down;
# absolute turnover charges both directions
alt = CostModel(0.0025, 0.0025, short_cost_mode="absolute_turnover")
print("absolute turnover:", cost_shrinkage(w_held, np.array([0.0, 0.0, 0.5, 0.5]), alt))


# %%
# Daily rotation on a market where nothing moves.
class DailyRotation:
    def act(self, state, env):
        w = np.zeros(env.cube.n_assets)
        w[1 + env.steps % 2] = 1.0
        return w


flat = FeatureCube(np.ones((4, 80, 1)), ("close",))
fig, ax = plt.subplots(figsize=(7, 4))
for c in (0.0, 0.001, 0.0025, 0.01):
    curve = run_backtest(DailyRotation(), flat, (10, 60), EnvConfig(horizon=5, costs=CostModel(c, c)))
    print(f"cost {c:.2%}: final value {curve.values[-1]:.4f}")
    ax.plot(curve.values, label=f"c = {c:.2%}")
ax.set_xlabel("day")
ax.set_ylabel("portfolio value")
ax.legend()
fig.savefig(out / "cost_shrinkage.png", dpi=100)
