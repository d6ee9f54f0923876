"""Analytic cost models: channel scaling, FLOPs, and parameter counts.

Every architecture here is data: a JSON template listing its layers, the
slot map tying layers to entries of a network encoding vector (NEV), and
the residual groups that must keep matching widths. Costs at any NEV are
plain arithmetic, so exploring millions of pruned variants is instant.
"""

import numpy as np

from metaprune import (
    builtin_template,
    baseline_flops,
    baseline_params,
    channels_of,
    flops_of,
    full_nev,
    params_of,
    random_nev,
)

# The published full-width baselines these templates reproduce.
published = {"resnet50": 4110e6, "mobilenet_v2": 314e6, "mobilenet_v1": 569e6}

print("full-width baselines")
print(f"{'template':14s} {'slots':>5s} {'flops':>10s} {'published':>10s} {'params':>9s}")
for name, target in published.items():
    t = builtin_template(name)
    f, p = baseline_flops(t), baseline_params(t)
    print(f"{name:14s} {t.nev_length:5d} {f / 1e6:9.1f}M {target / 1e6:9.0f}M {p / 1e6:8.2f}M")

# A NEV assigns each slot one of 31 width levels: 0.10, 0.13, ... 1.00.
t = builtin_template("mininet")
print(f"\nmininet has {t.nev_length} slots over {len(t.layers)} layers")
for nev in [(30, 30, 30, 30), (15, 15, 15, 15), (0, 0, 0, 0)]:
    widths = [channels_of(t, nev, i) for i in range(len(t.layers))]
    ratio = flops_of(t, nev) / baseline_flops(t)
    print(f"  nev {nev}: widths {widths}, {100 * ratio:5.1f}% of baseline FLOPs")

# Raising any slot never lowers cost; costs are exact integers.
rng = np.random.default_rng(0)
nev = list(random_nev(t, rng, (0, 29)))
bumped = list(nev)
bumped[0] += 1
print(f"\nmonotonicity: flops{tuple(nev)} = {flops_of(t, nev)}"
      f" <= flops{tuple(bumped)} = {flops_of(t, bumped)}")

# ResNet-50's residual additions force whole groups of layers to share a
# width; the template encodes that, so any NEV yields a consistent model.
r50 = builtin_template("resnet50")
nev = random_nev(r50, rng)
group = r50.shortcut_groups[0]
print(f"\nresnet50 shortcut group {group} widths under a random NEV:",
      {channels_of(r50, nev, i) for i in group})
