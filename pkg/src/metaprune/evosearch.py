"""Evolutionary search over network encoding vectors.

Candidates are genes: a NEV plus its analytic FLOPs (cached at creation)
and its reward (cached at ranking). Each generation the candidates are
scored with the reward function, merged into an elite archive, and the top
archive entries breed the next generation through per-slot mutation,
uniform crossover, and random refill. Every gene ever evaluated must fall
inside a configured FLOPs window; operators rejection-sample against it
with a bounded retry budget.

Determinism: all operator randomness is derived from
``(config.seed, epoch, operator, index)`` seed tuples, so a run is fully
reproducible and independent of fitness evaluation order or worker count.
The expensive fitness function is memoized by NEV across generations, so
re-encountered genes cost nothing and the unique-evaluation counter in the
history is meaningful.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .arch import GRID_SIZE, ArchTemplate, flops_of, random_nev, validate_nev
from .errors import MetapruneError, RewardDomainError, WindowInfeasibleError
from .reward import RewardParams, reward

logger = logging.getLogger(__name__)

HISTORY_SCHEMA = "metaprune/search-history/v1"
HISTOGRAM_SCHEMA = "metaprune/flops-histogram/v1"

#: accuracy-evaluation function: NEV -> accuracy fraction
Fitness = Callable[[tuple[int, ...]], float]


@dataclass(frozen=True)
class Gene:
    """A candidate NEV with its cached analytic FLOPs and (once ranked) reward."""

    nev: tuple[int, ...]
    flops: int
    accuracy: float | None = None
    reward: float | None = None


@dataclass(frozen=True)
class SearchConfig:
    """Search hyperparameters; defaults follow the 50-candidate, 20-epoch setup.

    The generation mix is k_elite unchanged carries + ``mutants`` mutated
    breeders + ``crossovers`` crossover children + random refill up to
    ``population``. Only the totals (population 50, breeders 10) are fixed
    by the method; the split is configurable and defaults to the
    2 + 24 + 14 + 10 proportions, scaled to the population. ``k_elite=0``
    reproduces the literal mutation+crossover-only next generation, at the
    cost of the non-decreasing best-reward guarantee.
    """

    min_flops: float
    max_flops: float
    population: int = 50
    elite_archive: int = 50
    breeders: int = 10
    mutation_rate: float = 0.10
    epochs: int = 20
    patience: int = 5
    seed: int = 0
    k_elite: int = 2
    mutants: int | None = None
    crossovers: int | None = None
    slot_range: tuple[int, int] = (0, GRID_SIZE - 1)
    retry_budget: int = 100

    def __post_init__(self) -> None:
        if self.mutants is None:
            object.__setattr__(self, "mutants", round(self.population * 24 / 50))
        if self.crossovers is None:
            object.__setattr__(self, "crossovers", round(self.population * 14 / 50))
        problems = []
        if not 0 < self.min_flops <= self.max_flops:
            problems.append("FLOPs window must satisfy 0 < min_flops <= max_flops")
        if self.population < 1:
            problems.append("population must be positive")
        if self.elite_archive < 1:
            problems.append("elite_archive must be positive")
        if not 0 <= self.breeders <= self.elite_archive:
            problems.append("breeders must lie in [0, elite_archive]")
        if not 0.0 <= self.mutation_rate < 1.0:
            problems.append("mutation_rate must lie in [0, 1)")
        if self.epochs < 1 or self.patience < 1:
            problems.append("epochs and patience must be positive")
        if self.seed < 0:
            problems.append("seed must be non-negative")
        if min(self.k_elite, self.mutants, self.crossovers) < 0:
            problems.append("generation mix counts must be non-negative")
        if self.k_elite + self.mutants + self.crossovers > self.population:
            problems.append("generation mix exceeds population")
        if self.breeders == 0 and (self.mutants or self.crossovers):
            problems.append("mutants/crossovers require breeders > 0")
        lo, hi = self.slot_range
        if not 0 <= lo <= hi < GRID_SIZE:
            problems.append(f"slot_range must be a non-empty range inside [0, {GRID_SIZE - 1}]")
        if self.retry_budget < 1:
            problems.append("retry_budget must be positive")
        if problems:
            raise MetapruneError("; ".join(problems))


@dataclass
class SearchState:
    epoch: int
    candidates: list[Gene]
    elites: list[Gene]
    history: list["HistoryRecord"] = field(default_factory=list)


@dataclass(frozen=True)
class HistoryRecord:
    epoch: int
    best_reward: float
    mean_reward: float
    best_accuracy: float
    best_flops: int
    unique_genes_evaluated: int


def _sort_key(g: Gene):
    # descending reward; ties broken by lower FLOPs, then lexicographic NEV,
    # so sorting is total and runs are reproducible
    return (-g.reward, g.flops, g.nev)


def _derived_rng(seed: int, *path: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, *path)))


def make_gene(template: ArchTemplate, nev: Sequence[int]) -> Gene:
    nev = validate_nev(template, nev)
    return Gene(nev=nev, flops=flops_of(template, nev))


def in_window(gene: Gene, config: SearchConfig) -> bool:
    return config.min_flops <= gene.flops <= config.max_flops


def random_valid_gene(
    template: ArchTemplate, config: SearchConfig, rng: np.random.Generator
) -> Gene:
    for _ in range(config.retry_budget):
        gene = make_gene(template, random_nev(template, rng, config.slot_range))
        if in_window(gene, config):
            return gene
    raise WindowInfeasibleError(
        f"no gene inside FLOPs window [{config.min_flops:.4g}, {config.max_flops:.4g}] "
        f"after {config.retry_budget} draws (slot range {config.slot_range})"
    )


def seed_population(
    template: ArchTemplate, config: SearchConfig, rng: np.random.Generator | None = None
) -> list[Gene]:
    """Random in-window genes to start the search, ``population`` of them."""
    if rng is not None:
        return [random_valid_gene(template, config, rng) for _ in range(config.population)]
    return [
        random_valid_gene(template, config, _derived_rng(config.seed, 0, 0, i))
        for i in range(config.population)
    ]


def mutate(
    gene: Gene,
    config: SearchConfig,
    rng: np.random.Generator,
    template: ArchTemplate,
) -> Gene:
    """Resample each slot with probability ``mutation_rate``.

    Resampling is uniform over the configured slot range and may redraw the
    current value, so the measured per-slot change rate is
    mutation_rate * (k-1)/k for a k-value range. Mutants falling outside
    the FLOPs window are redrawn from the original gene up to the retry
    budget; after that a fresh random valid gene is returned instead.
    """
    lo, hi = config.slot_range
    n = len(gene.nev)
    for _ in range(config.retry_budget):
        flip = rng.random(n) < config.mutation_rate
        draw = rng.integers(lo, hi + 1, size=n)
        candidate = tuple(
            int(d) if f else s for s, f, d in zip(gene.nev, flip, draw)
        )
        mutant = make_gene(template, candidate)
        if in_window(mutant, config):
            return mutant
    return random_valid_gene(template, config, rng)


def crossover(
    parent_a: Gene,
    parent_b: Gene,
    config: SearchConfig,
    rng: np.random.Generator,
    template: ArchTemplate,
) -> Gene:
    """Uniform crossover: every slot comes from one of the two parents."""
    if len(parent_a.nev) != len(parent_b.nev):
        raise MetapruneError("crossover parents must come from the same template")
    n = len(parent_a.nev)
    for _ in range(config.retry_budget):
        pick = rng.integers(0, 2, size=n)
        candidate = tuple(
            a if p == 0 else b for a, b, p in zip(parent_a.nev, parent_b.nev, pick)
        )
        child = make_gene(template, candidate)
        if in_window(child, config):
            return child
    return random_valid_gene(template, config, rng)


def rank(
    candidates: Sequence[Gene],
    fitness: Fitness,
    params: RewardParams,
) -> list[Gene]:
    """Score and sort candidates by descending reward.

    The fitness function runs once per gene in the list. A gene whose
    fitness call fails, or whose accuracy lands outside the reward domain,
    is dropped with a warning rather than failing the run.
    """
    ranked: list[Gene] = []
    for gene in candidates:
        try:
            accuracy = float(fitness(gene.nev))
        except Exception as exc:  # fitness is user code; contain per-gene failures
            logger.warning("fitness failed for gene %s: %r; gene discarded", gene.nev, exc)
            continue
        try:
            value = reward(accuracy, gene.flops, params)
        except RewardDomainError as exc:
            logger.warning("reward undefined for gene %s: %s; gene discarded", gene.nev, exc)
            continue
        ranked.append(replace(gene, accuracy=accuracy, reward=value.reward))
    ranked.sort(key=_sort_key)
    return ranked


def next_generation(
    state: SearchState,
    config: SearchConfig,
    template: ArchTemplate,
    rng: np.random.Generator | None = None,
) -> list[Gene]:
    """Breed the next population from the elite archive.

    Composition: the top ``k_elite`` elites unchanged, ``mutants`` mutated
    breeders, ``crossovers`` children of random breeder pairs, then random
    valid genes up to ``population``. With an explicit ``rng`` all draws
    come from it sequentially; otherwise per-index streams are derived from
    (seed, epoch, operator, index).
    """
    if not state.elites:
        raise MetapruneError("next_generation needs a non-empty elite archive")
    epoch = state.epoch + 1
    breeders = state.elites[: config.breeders]

    def stream(op: int, idx: int) -> np.random.Generator:
        return rng if rng is not None else _derived_rng(config.seed, epoch, op, idx)

    out: list[Gene] = list(state.elites[: config.k_elite])
    for j in range(config.mutants if breeders else 0):
        r = stream(1, j)
        parent = breeders[int(r.integers(len(breeders)))]
        out.append(mutate(parent, config, r, template))
    for j in range(config.crossovers if breeders else 0):
        r = stream(2, j)
        if len(breeders) >= 2:
            i1, i2 = r.choice(len(breeders), size=2, replace=False)
        else:
            i1 = i2 = 0
        out.append(crossover(breeders[int(i1)], breeders[int(i2)], config, r, template))
    for j in range(config.population - len(out)):
        out.append(random_valid_gene(template, config, stream(3, j)))
    return out


class _FitnessCache:
    """Memoizes the expensive fitness call by NEV; failures stick too."""

    def __init__(self, fitness: Fitness):
        self._fitness = fitness
        self._ok: dict[tuple[int, ...], float] = {}
        self._bad: dict[tuple[int, ...], Exception] = {}

    def __call__(self, nev: tuple[int, ...]) -> float:
        if nev in self._ok:
            return self._ok[nev]
        if nev in self._bad:
            raise self._bad[nev]
        try:
            value = float(self._fitness(nev))
        except Exception as exc:
            self._bad[nev] = exc
            raise
        self._ok[nev] = value
        return value

    def prefetch(self, nevs: Sequence[tuple[int, ...]], workers: int) -> None:
        pending = [n for n in dict.fromkeys(nevs) if n not in self._ok and n not in self._bad]
        if not pending or workers <= 1:
            return

        def safe(nev):
            try:
                self(nev)
            except Exception:
                pass  # recorded in _bad; rank() reports it

        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(safe, pending))

    @property
    def unique_evaluations(self) -> int:
        return len(self._ok) + len(self._bad)


def _merge_elites(elites: list[Gene], ranked: list[Gene], limit: int) -> list[Gene]:
    by_nev: dict[tuple[int, ...], Gene] = {}
    for gene in elites + ranked:
        if gene.reward is None:
            continue
        if gene.nev not in by_nev:
            by_nev[gene.nev] = gene
    merged = sorted(by_nev.values(), key=_sort_key)
    return merged[:limit]


def run_search(
    template: ArchTemplate,
    config: SearchConfig,
    fitness: Fitness,
    params: RewardParams,
    workers: int = 1,
) -> tuple[Gene, list[HistoryRecord]]:
    """Run the full evolutionary search; returns the best gene and history.

    Stops early once the best reward has not improved for ``patience``
    consecutive epochs. The best gene is the head of the elite archive,
    which only ever improves while the search runs.
    """
    if config.max_flops > params.baseline_flops:
        raise MetapruneError(
            f"FLOPs window max {config.max_flops:.4g} exceeds baseline "
            f"{params.baseline_flops:.4g}; psi would be undefined inside the window"
        )
    cache = _FitnessCache(fitness)
    state = SearchState(epoch=0, candidates=[], elites=[])
    best_reward = -np.inf
    stall = 0
    for epoch in range(config.epochs):
        if epoch == 0:
            candidates = seed_population(template, config)
        else:
            state.epoch = epoch - 1
            candidates = next_generation(state, config, template)
        cache.prefetch([g.nev for g in candidates], workers)
        ranked = rank(candidates, cache, params)
        if not ranked and not state.elites:
            raise MetapruneError(
                "every gene in the first generation failed evaluation; "
                "check the fitness function and reward baselines"
            )
        state.candidates = ranked
        state.elites = _merge_elites(state.elites, ranked, config.elite_archive)
        best = state.elites[0]
        state.history.append(
            HistoryRecord(
                epoch=epoch,
                best_reward=best.reward,
                mean_reward=float(np.mean([g.reward for g in ranked])) if ranked else float("nan"),
                best_accuracy=best.accuracy,
                best_flops=best.flops,
                unique_genes_evaluated=cache.unique_evaluations,
            )
        )
        if best.reward > best_reward:
            best_reward = best.reward
            stall = 0
        else:
            stall += 1
            if stall >= config.patience:
                logger.info(
                    "search stagnant for %d epochs at reward %.6g; stopping early",
                    stall, best_reward,
                )
                break
    return state.elites[0], state.history


def flops_distribution(
    template: ArchTemplate,
    n: int = 1000,
    slot_range: tuple[int, int] = (0, GRID_SIZE - 1),
    bins: int = 20,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """FLOPs histogram of ``n`` random NEVs: returns (bin edges, counts).

    Fixed-width bins over the observed range. Narrowing ``slot_range``
    shifts the distribution accordingly.
    """
    if n < 1:
        raise MetapruneError("n must be positive")
    if rng is None:
        rng = np.random.default_rng(0)
    values = np.array(
        [flops_of(template, random_nev(template, rng, slot_range)) for _ in range(n)],
        dtype=float,
    )
    if values.min() == values.max():
        return np.array([values[0], values[0]]), np.array([n])
    counts, edges = np.histogram(values, bins=bins)
    return edges, counts


def history_to_csv(path: str | Path, history: Sequence[HistoryRecord]) -> None:
    with Path(path).open("w", newline="") as fh:
        fh.write(f"# schema: {HISTORY_SCHEMA}\n")
        writer = csv.writer(fh)
        writer.writerow(
            ["epoch", "best_reward", "mean_reward", "best_accuracy", "best_flops",
             "unique_genes_evaluated"]
        )
        for rec in history:
            writer.writerow(
                [rec.epoch, repr(rec.best_reward), repr(rec.mean_reward),
                 repr(rec.best_accuracy), rec.best_flops, rec.unique_genes_evaluated]
            )


def histogram_to_csv(path: str | Path, edges: np.ndarray, counts: np.ndarray) -> None:
    with Path(path).open("w", newline="") as fh:
        fh.write(f"# schema: {HISTOGRAM_SCHEMA}\n")
        writer = csv.writer(fh)
        writer.writerow(["bin_low", "bin_high", "count"])
        for i, c in enumerate(counts):
            writer.writerow([repr(float(edges[i])), repr(float(edges[i + 1])), int(c)])
