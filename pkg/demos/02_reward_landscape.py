"""The reward function: how accuracy and compute trade off.

A candidate's reward is alpha * psi: alpha = (b_a / (b_a - A))^2 explodes
as accuracy A approaches the baseline b_a, while psi = ln(b_f / F) decays
to zero as FLOPs F approach the baseline b_f. High accuracy alone is not
enough; a candidate must also be cheap for psi to leave anything standing.
"""

import numpy as np

from metaprune import RewardParams, alpha, psi, reward, reward_surface
from metaprune.reward import export_reward_surface_csv

params = RewardParams(baseline_accuracy=0.766, baseline_flops=4110e6)

# Identities that pin the shape of the two coefficients.
print(f"alpha(0)        = {alpha(0.0, params):.4f}   (floor: no accuracy, coefficient 1)")
print(f"alpha(b_a/2)    = {alpha(0.383, params):.4f}   (half the baseline: 4, for any b_a)")
print(f"psi(b_f / e)    = {psi(4110e6 / np.e, params):.4f}   (one natural-log unit of savings)")

# The worked operating point: a model at 75.76% accuracy and 1950M MACs
# against the 76.6% / 4110M baseline.
value = reward(0.7576, 1950e6, params)
print(f"\nworked point: alpha={value.alpha:.1f} psi={value.psi:.4f} reward={value.reward:.1f}")

# The landscape: rows sweep accuracy, columns sweep FLOPs. Rewards rise
# along accuracy at any fixed cost and fall along cost at any accuracy.
accs = np.linspace(0.30, 0.75, 8)
flops = np.linspace(800e6, 3900e6, 6)
surface = reward_surface(params, accs, flops)
print("\nreward surface (rows: accuracy, cols: FLOPs in M MACs)")
print("          " + "".join(f"{f/1e6:9.0f}" for f in flops))
for a, row in zip(accs, surface):
    print(f"  A={a:.2f} " + "".join(f"{v:9.2f}" for v in row))

export_reward_surface_csv("reward_surface_demo.csv", params, accs, flops)
print("\nwrote reward_surface_demo.csv (header row = FLOPs grid, first column = accuracy)")
