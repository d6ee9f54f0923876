"""Where random encodings land: the FLOPs distribution and how to steer it.

Sampling every slot uniformly over the full grid produces a bell-shaped
FLOPs distribution (many slots, independent choices). Restricting the slot
index range moves the whole mass: the knob that controls what a random
seed population costs before any search pressure is applied.
"""

import numpy as np

from metaprune import builtin_template, baseline_flops, flops_distribution

template = builtin_template("resnet50")
base = baseline_flops(template)


def show(label, slot_range, seed=0):
    edges, counts = flops_distribution(
        template, n=1000, slot_range=slot_range, bins=14,
        rng=np.random.default_rng(seed),
    )
    centers = (edges[:-1] + edges[1:]) / 2
    mean = np.average(centers, weights=counts)
    print(f"\n{label} (slot range {slot_range}), mean {mean / 1e6:.0f}M MACs")
    peak = counts.max()
    for lo, hi, c in zip(edges[:-1], edges[1:], counts):
        bar = "#" * round(40 * c / peak)
        print(f"  {lo / 1e6:7.0f}-{hi / 1e6:7.0f}M {c:4d} {bar}")


show("full grid", (0, 30))
show("narrow widths", (0, 10))
show("wide widths", (20, 30))

print(f"\nbaseline (all slots at 1.0): {base / 1e6:.0f}M MACs")
