"""Command-line entry point: ``metaprune <subcommand>``.

Subcommands
    meta-train      phase 1: train the weight generators
    search          phase 2: evolutionary NEV search (needs hypernet.ckpt)
    retrain         phase 3: retrain the winner (needs best_gene.json)
    run-all         all three phases, resuming from existing artifacts
    flops           analytic FLOPs/params report for a template and NEV
    reward-surface  export the reward over an accuracy x FLOPs grid as CSV
    distribution    FLOPs histogram of random NEVs as CSV
    report          print the persisted run report

Configuration comes from a JSON file (--config) with flag overrides; every
field has a default, so the phase commands also run with flags alone. The
full schema, all fields optional:

    {
      "schema": "metaprune/config/v1",
      "template": "mininet",                  // builtin name or JSON path
      "dataset": {
        "format": "synthetic",                // or "idx"
        "path": null,                         // directory for idx
        "n_train": 10000, "n_val": 1000,      // synthetic generator knobs
        "classes": 10, "size": 28,
        "noise": 3.0, "seed": 7
      },
      "reward": {
        "baseline_accuracy": 0.995,
        "baseline_flops": null                // null: 1.02 x template baseline
      },
      "search": {
        "population": 50, "elite_archive": 50, "breeders": 10,
        "mutation_rate": 0.1, "patience": 5, "k_elite": 2,
        "mutants": 24, "crossovers": 14,
        "flops_window_frac": [0.30, 0.65],    // fractions of baseline FLOPs,
        "flops_window_macs": null,            // or absolute MACs (exclusive)
        "slot_range": [0, 30]
      },
      "epochs": {"max_training": 64, "max_iter": 20, "max_tuning": 30},
      "meta_schedule": {"kind": "milestone-decay", "initial_lr": 1.0,
                        "gamma": 0.1, "milestones": [44, 57]},
      "tune_schedule": {"kind": "milestone-decay", "initial_lr": 1.0,
                        "gamma": 0.1, "milestones": [18, 25]},
      "batch_size": 64, "hidden": 64, "calibration_size": 256,
      "seed": 42, "workers": 1,
      "out": "runs/mininet"                   // default: $METAPRUNE_OUT or ./runs
    }

Exit codes: 0 success, 2 invalid configuration/usage (every violated field
listed), 1 runtime failure. Subcommands write only inside the output
directory.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import hypernet as hn
from . import pipeline as pl
from .arch import GRID_SIZE, baseline_flops, baseline_params, flops_of, full_nev, params_of, resolve_template, validate_nev
from .errors import ConfigError, MetapruneError
from .evosearch import SearchConfig, flops_distribution, histogram_to_csv
from .reward import RewardParams, export_reward_surface_csv, param_ratio
from .tensorcore import Schedule

CONFIG_SCHEMA = "metaprune/config/v1"

_DATASET_DEFAULTS = {
    "format": "synthetic",
    "path": None,
    "n_train": 10_000,
    "n_val": 1000,
    "classes": 10,
    "size": 28,
    "noise": 3.0,
    "seed": 7,
}

_SEARCH_DEFAULTS = {
    "population": 50,
    "elite_archive": 50,
    "breeders": 10,
    "mutation_rate": 0.1,
    "patience": 5,
    "k_elite": 2,
    "mutants": 24,
    "crossovers": 14,
    "flops_window_frac": [0.30, 0.65],
    "flops_window_macs": None,
    "slot_range": [0, GRID_SIZE - 1],
}


@dataclass
class RunConfig:
    """Validated run configuration; carries max_training/max_iter/max_tuning."""

    template: str = "mininet"
    dataset: dict = field(default_factory=lambda: dict(_DATASET_DEFAULTS))
    reward: dict = field(default_factory=lambda: {"baseline_accuracy": 0.995,
                                                  "baseline_flops": None})
    search: dict = field(default_factory=lambda: dict(_SEARCH_DEFAULTS))
    max_training: int = 64
    max_iter: int = 20
    max_tuning: int = 30
    meta_schedule: dict | None = None
    tune_schedule: dict | None = None
    batch_size: int = 64
    hidden: int = 64
    calibration_size: int = 256
    seed: int = 42
    workers: int = 1
    out: str = ""

    def to_dict(self) -> dict:
        return {
            "schema": CONFIG_SCHEMA,
            "template": self.template,
            "dataset": dict(self.dataset),
            "reward": dict(self.reward),
            "search": dict(self.search),
            "epochs": {
                "max_training": self.max_training,
                "max_iter": self.max_iter,
                "max_tuning": self.max_tuning,
            },
            "meta_schedule": dict(self.meta_schedule) if self.meta_schedule else None,
            "tune_schedule": dict(self.tune_schedule) if self.tune_schedule else None,
            "batch_size": self.batch_size,
            "hidden": self.hidden,
            "calibration_size": self.calibration_size,
            "seed": self.seed,
            "workers": self.workers,
            "out": self.out,
        }


def default_out_dir() -> str:
    return os.environ.get("METAPRUNE_OUT", "runs")


def _merge_section(defaults: dict, given, problems: list[str], name: str) -> dict:
    merged = dict(defaults)
    if given is None:
        return merged
    if not isinstance(given, dict):
        problems.append(f"{name}: must be an object")
        return merged
    unknown = given.keys() - defaults.keys()
    if unknown:
        problems.append(f"{name}: unknown fields {sorted(unknown)}")
    merged.update({k: v for k, v in given.items() if k in defaults})
    return merged


def config_from_dict(doc: dict) -> RunConfig:
    """Build and validate a RunConfig, reporting every violation at once."""
    problems: list[str] = []
    if not isinstance(doc, dict):
        raise ConfigError(["configuration must be a JSON object"])
    if doc.get("schema", CONFIG_SCHEMA) != CONFIG_SCHEMA:
        problems.append(f"schema: unsupported {doc.get('schema')!r}")
    known = {
        "schema", "template", "dataset", "reward", "search", "epochs",
        "meta_schedule", "tune_schedule", "batch_size", "hidden",
        "calibration_size", "seed", "workers", "out",
    }
    unknown = doc.keys() - known
    if unknown:
        problems.append(f"unknown top-level fields {sorted(unknown)}")

    dataset = _merge_section(_DATASET_DEFAULTS, doc.get("dataset"), problems, "dataset")
    if dataset["format"] not in ("synthetic", "idx"):
        problems.append(f"dataset.format: {dataset['format']!r} is not 'synthetic' or 'idx'")
    if dataset["format"] == "idx" and not dataset["path"]:
        problems.append("dataset.path: required for idx format")
    for key in ("n_train", "n_val", "classes", "size"):
        if not isinstance(dataset[key], int) or dataset[key] < 1:
            problems.append(f"dataset.{key}: must be a positive integer")

    reward = _merge_section(
        {"baseline_accuracy": 0.995, "baseline_flops": None},
        doc.get("reward"), problems, "reward",
    )
    ba = reward["baseline_accuracy"]
    if not (isinstance(ba, (int, float)) and 0.0 < ba < 1.0):
        problems.append("reward.baseline_accuracy: must be a fraction in (0, 1)")
    bf = reward["baseline_flops"]
    if bf is not None and not (isinstance(bf, (int, float)) and bf > 0):
        problems.append("reward.baseline_flops: must be positive or null")

    search = _merge_section(_SEARCH_DEFAULTS, doc.get("search"), problems, "search")
    frac = search.get("flops_window_frac")
    macs = search.get("flops_window_macs")
    if frac is not None and macs is not None:
        problems.append("search: flops_window_frac and flops_window_macs are exclusive")
    window = macs if macs is not None else frac
    if (
        not isinstance(window, (list, tuple))
        or len(window) != 2
        or not all(isinstance(v, (int, float)) for v in window)
        or not 0 < window[0] <= window[1]
    ):
        problems.append("search: FLOPs window must be [low, high] with 0 < low <= high")
    sr = search.get("slot_range")
    if (
        not isinstance(sr, (list, tuple))
        or len(sr) != 2
        or not all(isinstance(v, int) for v in sr)
        or not 0 <= sr[0] <= sr[1] < GRID_SIZE
    ):
        problems.append(f"search.slot_range: must be [lo, hi] inside [0, {GRID_SIZE - 1}]")

    epochs = _merge_section(
        {"max_training": 64, "max_iter": 20, "max_tuning": 30},
        doc.get("epochs"), problems, "epochs",
    )
    for key, value in epochs.items():
        if not isinstance(value, int) or value < 0:
            problems.append(f"epochs.{key}: must be a non-negative integer")

    for name in ("meta_schedule", "tune_schedule"):
        sched = doc.get(name)
        if sched is not None:
            try:
                _schedule_from_dict(sched)
            except (MetapruneError, KeyError, TypeError) as exc:
                problems.append(f"{name}: {exc}")

    scalars = {
        "batch_size": (doc.get("batch_size", 64), 1),
        "hidden": (doc.get("hidden", 64), 1),
        "calibration_size": (doc.get("calibration_size", 256), 1),
        "seed": (doc.get("seed", 42), 0),
        "workers": (doc.get("workers", 1), 1),
    }
    for key, (value, lo) in scalars.items():
        if not isinstance(value, int) or value < lo:
            problems.append(f"{key}: must be an integer >= {lo}")

    template = doc.get("template", "mininet")
    if not isinstance(template, str) or not template:
        problems.append("template: must be a builtin name or a file path")

    out = doc.get("out") or default_out_dir()
    if problems:
        raise ConfigError(problems)
    return RunConfig(
        template=template,
        dataset=dataset,
        reward=reward,
        search=search,
        max_training=epochs["max_training"],
        max_iter=epochs["max_iter"],
        max_tuning=epochs["max_tuning"],
        meta_schedule=doc.get("meta_schedule"),
        tune_schedule=doc.get("tune_schedule"),
        batch_size=scalars["batch_size"][0],
        hidden=scalars["hidden"][0],
        calibration_size=scalars["calibration_size"][0],
        seed=scalars["seed"][0],
        workers=scalars["workers"][0],
        out=str(out),
    )


def _schedule_from_dict(doc: dict) -> Schedule:
    return Schedule(
        kind=doc["kind"],
        initial_lr=float(doc["initial_lr"]),
        gamma=float(doc.get("gamma", 0.1)),
        milestones=tuple(int(m) for m in doc.get("milestones", ())),
    )


def load_config(path: str | None, overrides: argparse.Namespace) -> RunConfig:
    doc: dict = {}
    if path:
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError([f"config file not found: {path}"]) from None
        except json.JSONDecodeError as exc:
            raise ConfigError([f"config file {path} is not valid JSON: {exc}"]) from exc
    # flags override file fields
    if getattr(overrides, "template", None):
        doc["template"] = overrides.template
    if getattr(overrides, "dataset", None) or getattr(overrides, "format", None):
        section = dict(doc.get("dataset", {}))
        if overrides.dataset:
            section["path"] = overrides.dataset
        if overrides.format:
            section["format"] = overrides.format
        doc["dataset"] = section
    if getattr(overrides, "seed", None) is not None:
        doc["seed"] = overrides.seed
    if getattr(overrides, "workers", None) is not None:
        doc["workers"] = overrides.workers
    if getattr(overrides, "out", None):
        doc["out"] = overrides.out
    epochs = dict(doc.get("epochs", {}))
    for flag, key in (
        ("max_training", "max_training"),
        ("max_iter", "max_iter"),
        ("max_tuning", "max_tuning"),
    ):
        value = getattr(overrides, flag, None)
        if value is not None:
            epochs[key] = value
    if epochs:
        doc["epochs"] = epochs
    if getattr(overrides, "batch_size", None) is not None:
        doc["batch_size"] = overrides.batch_size
    return config_from_dict(doc)


# ---------------------------------------------------------------------------
# Assembling pipeline inputs from a validated config


def _resolved(cfg: RunConfig):
    template = resolve_template(cfg.template)
    base_f = baseline_flops(template)
    bf = cfg.reward["baseline_flops"]
    reward_params = RewardParams(
        baseline_accuracy=cfg.reward["baseline_accuracy"],
        baseline_flops=float(bf) if bf is not None else base_f * 1.02,
    )
    s = cfg.search
    if s.get("flops_window_macs") is not None:
        lo, hi = s["flops_window_macs"]
    else:
        lo, hi = (f * base_f for f in s["flops_window_frac"])
    search = SearchConfig(
        min_flops=lo, max_flops=hi,
        population=s["population"], elite_archive=s["elite_archive"],
        breeders=s["breeders"], mutation_rate=s["mutation_rate"],
        epochs=max(1, cfg.max_iter), patience=s["patience"], seed=cfg.seed,
        k_elite=s["k_elite"], mutants=s["mutants"], crossovers=s["crossovers"],
        slot_range=tuple(s["slot_range"]),
    )
    return template, reward_params, search


def _load_dataset(cfg: RunConfig) -> pl.Dataset:
    d = cfg.dataset
    if d["format"] == "idx":
        return pl.ingest(d["path"], "idx")
    return pl.ingest(
        None, "synthetic",
        n_train=d["n_train"], n_val=d["n_val"], classes=d["classes"],
        size=d["size"], noise=d["noise"], seed=d["seed"],
    )


def _epochs(cfg: RunConfig) -> pl.PhaseEpochs:
    return pl.PhaseEpochs(
        max_training=cfg.max_training, max_iter=cfg.max_iter, max_tuning=cfg.max_tuning
    )


def _schedules(cfg: RunConfig):
    epochs = _epochs(cfg)
    meta = (
        _schedule_from_dict(cfg.meta_schedule)
        if cfg.meta_schedule
        else pl.default_meta_schedule(epochs)
    )
    tune = (
        _schedule_from_dict(cfg.tune_schedule)
        if cfg.tune_schedule
        else pl.default_tune_schedule(epochs)
    )
    return meta, tune


# ---------------------------------------------------------------------------
# Subcommand implementations


def _cmd_run_all(cfg: RunConfig) -> int:
    template, reward_params, search = _resolved(cfg)
    dataset = _load_dataset(cfg)
    meta_sched, tune_sched = _schedules(cfg)
    report = pl.run_all(
        template, dataset, cfg.out,
        epochs=_epochs(cfg), search=search, reward_params=reward_params,
        meta_schedule=meta_sched, tune_schedule=tune_sched, seed=cfg.seed,
        batch_size=cfg.batch_size, hidden=cfg.hidden,
        calibration_size=cfg.calibration_size, workers=cfg.workers,
    )
    print(json.dumps(report.to_dict(), indent=1))
    return 0


def _cmd_meta_train(cfg: RunConfig) -> int:
    template, _, _ = _resolved(cfg)
    dataset = _load_dataset(cfg)
    meta_sched, _ = _schedules(cfg)
    pl.meta_phase(
        template, dataset, cfg.out, epochs=cfg.max_training, schedule=meta_sched,
        seed=cfg.seed, batch_size=cfg.batch_size, hidden=cfg.hidden,
        calibration_size=cfg.calibration_size, resume=False,
    )
    print(f"hypernet checkpoint written to {Path(cfg.out) / 'hypernet.ckpt'}")
    return 0


def _cmd_search(cfg: RunConfig) -> int:
    template, reward_params, search = _resolved(cfg)
    ckpt = Path(cfg.out) / "hypernet.ckpt"
    if not ckpt.exists():
        print(f"error: {ckpt} not found; run meta-train first", file=sys.stderr)
        return 1
    dataset = _load_dataset(cfg)
    h = hn.load_hypernet(ckpt, template)
    best = pl.search_phase(
        template, dataset, cfg.out, h, search=search, reward_params=reward_params,
        calibration_size=cfg.calibration_size, workers=cfg.workers, resume=False,
    )
    print(json.dumps({
        "nev": list(best.nev), "flops": best.flops,
        "accuracy": best.accuracy, "reward": best.reward,
    }, indent=1))
    return 0


def _cmd_retrain(cfg: RunConfig) -> int:
    template, _, _ = _resolved(cfg)
    gene_path = Path(cfg.out) / "best_gene.json"
    if not gene_path.exists():
        print(f"error: {gene_path} not found; run search first", file=sys.stderr)
        return 1
    dataset = _load_dataset(cfg)
    _, tune_sched = _schedules(cfg)
    best = pl.load_gene(gene_path)
    report = pl.retrain_phase(
        template, dataset, cfg.out, best, epochs=cfg.max_tuning,
        schedule=tune_sched, seed=cfg.seed, batch_size=cfg.batch_size, resume=False,
    )
    print(json.dumps(report.to_dict(), indent=1))
    return 0


def _parse_nev(arg: str | None, template) -> tuple[int, ...]:
    if not arg:
        return full_nev(template)
    return validate_nev(template, [int(v) for v in arg.split(",")])


def _cmd_flops(args: argparse.Namespace) -> int:
    template = resolve_template(args.template)
    nev = _parse_nev(args.nev, template)
    f = flops_of(template, nev)
    p = params_of(template, nev)
    base_f, base_p = baseline_flops(template), baseline_params(template)
    print(f"template: {template.name}")
    print(f"nev: {','.join(str(v) for v in nev)}")
    print(f"flops: {f} ({f / 1e6:.1f}M, {100 * f / base_f:.1f}% of baseline {base_f / 1e6:.1f}M)")
    print(f"params: {p} ({p / 1e6:.3f}M, P* = {param_ratio(p, base_p):.1f}%)")
    return 0


def _cmd_reward_surface(args: argparse.Namespace) -> int:
    params = RewardParams(baseline_accuracy=args.ba, baseline_flops=args.bf)
    acc = np.linspace(args.acc[0], args.acc[1], int(args.acc[2]))
    flp = np.linspace(args.flops[0], args.flops[1], int(args.flops[2]))
    out = Path(args.out or default_out_dir())
    out.mkdir(parents=True, exist_ok=True)
    path = out / "reward_surface.csv"
    export_reward_surface_csv(path, params, acc, flp)
    print(f"wrote {path} ({len(acc)}x{len(flp)} grid)")
    return 0


def _cmd_distribution(args: argparse.Namespace) -> int:
    template = resolve_template(args.template)
    rng = np.random.default_rng(args.seed)
    edges, counts = flops_distribution(
        template, n=args.n, slot_range=tuple(args.slot_range), bins=args.bins, rng=rng
    )
    out = Path(args.out or default_out_dir())
    out.mkdir(parents=True, exist_ok=True)
    path = out / "flops_histogram.csv"
    histogram_to_csv(path, edges, counts)
    centers = (edges[:-1] + edges[1:]) / 2 if len(edges) > 1 else edges[:1]
    mean = float(np.average(centers, weights=counts))
    print(f"wrote {path} ({args.n} samples, {len(counts)} bins, mean {mean / 1e6:.1f}M MACs)")
    return 0


def _cmd_report(cfg: RunConfig) -> int:
    path = Path(cfg.out) / "report.json"
    if not path.exists():
        print(f"error: {path} not found; run the pipeline first", file=sys.stderr)
        return 1
    print(path.read_text(), end="")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON configuration file")
    p.add_argument("--template", help="builtin template name or JSON path")
    p.add_argument("--dataset", help="dataset path (idx directory)")
    p.add_argument("--format", choices=("idx", "synthetic"), help="dataset format")
    p.add_argument("--seed", type=int, help="master RNG seed")
    p.add_argument("--workers", type=int, help="concurrent fitness evaluations")
    p.add_argument("--out", help="output directory (default $METAPRUNE_OUT or ./runs)")
    p.add_argument("--max-training", dest="max_training", type=int,
                   help="meta-training epochs")
    p.add_argument("--max-iter", dest="max_iter", type=int, help="search epochs")
    p.add_argument("--max-tuning", dest="max_tuning", type=int, help="retraining epochs")
    p.add_argument("--batch-size", dest="batch_size", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="metaprune",
        description="Reward-driven channel pruning: meta-train, search, retrain.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (
        ("run-all", "run meta-train, search, and retrain end to end"),
        ("meta-train", "train the hypernetwork weight generators"),
        ("search", "evolutionary NEV search against a trained hypernetwork"),
        ("retrain", "retrain the best NEV from scratch"),
        ("report", "print the persisted run report"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_config_flags(p)

    p = sub.add_parser("flops", help="analytic FLOPs/params for a template and NEV")
    p.add_argument("--template", required=True)
    p.add_argument("--nev", help="comma-separated slot indices (default: full width)")

    p = sub.add_parser("reward-surface", help="export the reward surface as CSV")
    p.add_argument("--ba", type=float, required=True, help="baseline accuracy fraction")
    p.add_argument("--bf", type=float, required=True, help="baseline FLOPs (MACs)")
    p.add_argument("--acc", type=float, nargs=3, metavar=("LO", "HI", "STEPS"),
                   default=(0.0, 0.75, 16))
    p.add_argument("--flops", type=float, nargs=3, metavar=("LO", "HI", "STEPS"),
                   default=(0.1, 0.99, 16),
                   help="grid as fractions of --bf" )
    p.add_argument("--out")

    p = sub.add_parser("distribution", help="FLOPs histogram of random NEVs")
    p.add_argument("--template", required=True)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--slot-range", dest="slot_range", type=int, nargs=2,
                   default=(0, GRID_SIZE - 1))
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "flops":
            return _cmd_flops(args)
        if args.command == "distribution":
            return _cmd_distribution(args)
        if args.command == "reward-surface":
            args.flops = [args.flops[0] * args.bf, args.flops[1] * args.bf, args.flops[2]]
            return _cmd_reward_surface(args)
        cfg = load_config(args.config, args)
        dispatch = {
            "run-all": _cmd_run_all,
            "meta-train": _cmd_meta_train,
            "search": _cmd_search,
            "retrain": _cmd_retrain,
            "report": _cmd_report,
        }
        return dispatch[args.command](cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except MetapruneError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
