"""
Synthetic markets and amplified state tensors
=============================================

Generate a small geometric Brownian motion market, build the seven-feature
cube the agents observe, and look at one amplified state window.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from portfolio_rl import DEFAULT_FEATURES, SyntheticSpec, amplify_state, build_feature_cube, generate_synthetic

out = Path(__file__).with_name("_output")
out.mkdir(exist_ok=True)

# three risky assets; CASH is added in front automatically
spec = SyntheticSpec(mu=(0.0005, 0.0003, 0.0), sigma=(0.01, 0.015, 0.02), days=600, names=("A1", "A2", "A3"))
series = generate_synthetic(spec, seed=0)
print(series.assets, series.n_days, series.dates[0], series.dates[-1])

cube = build_feature_cube(series, DEFAULT_FEATURES)
print("features:", cube.feature_names)
print("cube shape (assets, days, features):", cube.entries.shape)

# %%
# Amplification turns levels into day-over-day ratios scaled by K = 100,
# so a quiet day sits at exactly 100 for every feature.
state = amplify_state(cube, t_end=299, d=50, K=100.0)
print("state shape:", state.entries.shape)
# the last feature repeats A1's close in every row, CASH included
print("CASH own features are flat:", np.all(state.entries[0, :, :6] == 100.0))
print("A3 close ratios, last 5 days:", np.round(state.entries[3, -5:, 0], 3))

fig, (ax0, ax1) = plt.subplots(2, 1, figsize=(7, 6))
for i, name in enumerate(series.assets):
    ax0.plot(series.closes[i], label=name)
ax0.set_title("closes")
ax0.legend()
im = ax1.imshow(state.entries[:, :, 0], aspect="auto", cmap="RdBu_r", vmin=95, vmax=105)
ax1.set_yticks(range(4), series.assets)
ax1.set_title("amplified close ratios in one 50-day window")
fig.colorbar(im, ax=ax1)
fig.tight_layout()
fig.savefig(out / "market_data.png", dpi=100)
