"""Evolutionary search over encodings, against a synthetic fitness oracle.

Real runs score candidates with a meta-trained hypernetwork; here a
deterministic stand-in (accuracy affine in mean channel scale) makes the
search dynamics visible in under a second. The tension is built in: wider
models score higher accuracy but burn FLOPs, so the reward peaks at an
interior width.
"""

import itertools

import numpy as np

from metaprune import RewardParams, SearchConfig, builtin_template, baseline_flops, run_search
from metaprune.evosearch import make_gene
from metaprune.reward import reward

template = builtin_template("mininet")
base = baseline_flops(template)
params = RewardParams(baseline_accuracy=0.9, baseline_flops=base * 1.05)


def fitness(nev):
    levels = template.grid.levels
    mean_scale = sum(levels[v] for v in nev) / len(nev)
    return 0.2 + 0.5 * (mean_scale - 0.1) / 0.9


config = SearchConfig(
    min_flops=0.2 * base, max_flops=0.9 * base,
    population=30, epochs=12, breeders=6, k_elite=2, mutants=12, crossovers=8,
    patience=12, seed=3,
)
best, history = run_search(template, config, fitness, params)

print("epoch  best_reward  best_acc  best_flops  unique")
for rec in history:
    print(f"{rec.epoch:5d}  {rec.best_reward:11.4f}  {rec.best_accuracy:8.3f}"
          f"  {rec.best_flops / base:9.2%}  {rec.unique_genes_evaluated:6d}")
print(f"\nbest gene: nev={best.nev} flops={best.flops / base:.1%} reward={best.reward:.4f}")

# Sanity: brute force a small sub-box of the space and place the winner.
grid = range(10, 31, 5)
box = [make_gene(template, nev) for nev in itertools.product(grid, repeat=4)]
scored = sorted(
    (reward(fitness(g.nev), g.flops, params).reward for g in box), reverse=True
)
print(f"search best {best.reward:.4f} vs best of a {len(box)}-gene brute-force box "
      f"{scored[0]:.4f}")
