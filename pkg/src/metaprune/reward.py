"""The reward function scoring pruned-model candidates.

A candidate is scored by the product of two coefficients measured against a
baseline model: an accuracy coefficient that blows up as the candidate
approaches the baseline accuracy, and an efficiency coefficient that grows
as its compute cost shrinks below the baseline:

    accuracy coefficient   alpha(A) = (b_a / (b_a - A))^2,   0 <= A < b_a
    efficiency coefficient psi(F)   = ln(b_f / F),           0 <  F < b_f
    reward                 R        = alpha * psi

Accuracies are fractions in (0, 1) everywhere in this package; percentages
are converted at ingestion because alpha is scale-dependent. The logarithm
base only rescales every psi by one positive constant, so candidate ranking
is base-invariant; natural log is the fixed choice here.

Domain violations (accuracy at or above the baseline, FLOPs at or above the
baseline) raise ``RewardDomainError`` rather than clamping: a clamped value
near the alpha pole would let a single gene dominate the search spuriously.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import RewardDomainError

REWARD_SURFACE_SCHEMA = "metaprune/reward-surface/v1"


@dataclass(frozen=True)
class RewardParams:
    """Baseline accuracy (fraction) and baseline FLOPs (MACs) of the unpruned model."""

    baseline_accuracy: float
    baseline_flops: float

    def __post_init__(self) -> None:
        if not 0.0 < self.baseline_accuracy < 1.0:
            raise RewardDomainError(
                f"baseline accuracy must be a fraction in (0, 1), got {self.baseline_accuracy}"
            )
        if not self.baseline_flops > 0:
            raise RewardDomainError(f"baseline FLOPs must be positive, got {self.baseline_flops}")


@dataclass(frozen=True)
class RewardValue:
    alpha: float
    psi: float
    reward: float


def alpha(accuracy: float, params: RewardParams) -> float:
    """Accuracy coefficient; strictly increasing on [0, b_a), 1 at accuracy 0."""
    b_a = params.baseline_accuracy
    if accuracy < 0.0:
        raise RewardDomainError(f"accuracy must be non-negative, got {accuracy}")
    if accuracy >= b_a:
        # The symmetric branch above the baseline is meaningless for ranking;
        # hitting it means the configured baseline is wrong for this task.
        raise RewardDomainError(
            f"accuracy {accuracy} reached baseline {b_a}; baseline is miscalibrated"
        )
    ratio = b_a / (b_a - accuracy)
    return ratio * ratio


def psi(flops: float, params: RewardParams) -> float:
    """Efficiency coefficient; strictly decreasing on (0, b_f), 0 at the baseline."""
    b_f = params.baseline_flops
    if flops <= 0:
        raise RewardDomainError(f"FLOPs must be positive, got {flops}")
    if flops >= b_f:
        raise RewardDomainError(
            f"FLOPs {flops} at or above baseline {b_f}; gene should have been "
            "rejected by the FLOPs window"
        )
    return math.log(b_f / flops)


def reward(gene_accuracy: float, gene_flops: float, params: RewardParams) -> RewardValue:
    """Score a candidate; increasing in accuracy, decreasing in FLOPs."""
    a = alpha(gene_accuracy, params)
    p = psi(gene_flops, params)
    return RewardValue(alpha=a, psi=p, reward=a * p)


def param_ratio(pruned_params: float, baseline_params: float) -> float:
    """Pruned-to-baseline weight-count ratio, as a percentage."""
    if baseline_params <= 0:
        raise RewardDomainError(f"baseline parameter count must be positive, got {baseline_params}")
    return pruned_params / baseline_params * 100.0


def reward_surface(
    params: RewardParams,
    accuracy_grid: Sequence[float],
    flops_grid: Sequence[float],
) -> np.ndarray:
    """Reward evaluated over an accuracy x FLOPs grid, for plotting.

    Returns a float array of shape (len(accuracy_grid), len(flops_grid)).
    Grid points outside the coefficient domains are flagged as NaN instead
    of failing the whole export.
    """
    acc = np.asarray(accuracy_grid, dtype=float)
    flp = np.asarray(flops_grid, dtype=float)
    out = np.full((acc.size, flp.size), np.nan)
    for i, a in enumerate(acc):
        for j, f in enumerate(flp):
            try:
                out[i, j] = reward(float(a), float(f), params).reward
            except RewardDomainError:
                pass
    return out


def export_reward_surface_csv(
    path: str | Path,
    params: RewardParams,
    accuracy_grid: Sequence[float],
    flops_grid: Sequence[float],
) -> np.ndarray:
    """Write the surface as CSV: header row = FLOPs grid, first column = accuracy."""
    surface = reward_surface(params, accuracy_grid, flops_grid)
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(f"# schema: {REWARD_SURFACE_SCHEMA}\n")
        writer = csv.writer(fh)
        writer.writerow(["accuracy"] + [repr(float(f)) for f in flops_grid])
        for a, row in zip(accuracy_grid, surface):
            writer.writerow([repr(float(a))] + [repr(float(v)) for v in row])
    return surface
