"""End-to-end orchestration: ingest data, meta-train, search, retrain, report.

The three phases run in sequence and each persists its artifact in the run
directory, so an interrupted run resumes from whatever completed:

    hypernet.ckpt        trained weight generators (meta-train)
    meta_history.csv     per-epoch meta-training log
    search_history.csv   per-epoch search log
    best_gene.json       the searched winner with its FLOPs and reward
    model.ckpt           retrained parameters of the winner
    report.json          final metrics

Phase RNG streams derive from (seed, phase), so a resumed run reproduces
the uninterrupted one exactly. Retraining reads only the best NEV and the
train split: the hypernet checkpoint can be deleted after the search
without changing anything downstream.

Datasets carry a raw uint8 form (IDX-compatible, bit-exact round trips)
and a normalized float form (per-channel mean/std computed on the train
split, applied to both splits). The validation split never drives an
update anywhere; it is only scored.
"""

from __future__ import annotations

import csv
import json
import logging
import struct
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import hypernet as hn
from .arch import (
    ArchTemplate,
    baseline_flops,
    baseline_params,
    channels_of,
    flops_of,
    full_nev,
    params_of,
    validate_nev,
)
from .errors import DatasetError, MetapruneError, OptimizerError
from .evosearch import Gene, SearchConfig, HistoryRecord, history_to_csv, run_search
from .reward import RewardParams, param_ratio
from .tensorcore import (
    Schedule,
    Tensor,
    backward,
    load_checkpoint,
    parameter,
    save_checkpoint,
    sgd_step,
    softmax_cross_entropy,
    uniform_init,
    zero_grads,
)

logger = logging.getLogger(__name__)

REPORT_SCHEMA = "metaprune/report/v1"
GENE_SCHEMA = "metaprune/best-gene/v1"
META_HISTORY_SCHEMA = "metaprune/meta-history/v1"

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

IDX_NAMES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "val_images": "t10k-images-idx3-ubyte",
    "val_labels": "t10k-labels-idx1-ubyte",
}


@dataclass
class RawDataset:
    """Unnormalized uint8 splits, shaped (N, H, W); grayscale."""

    train_images: np.ndarray
    train_labels: np.ndarray
    val_images: np.ndarray
    val_labels: np.ndarray
    classes: int


@dataclass
class Dataset:
    """Normalized float64 splits, shaped (N, 1, H, W)."""

    train_images: np.ndarray
    train_labels: np.ndarray
    val_images: np.ndarray
    val_labels: np.ndarray
    classes: int
    mean: np.ndarray
    std: np.ndarray


def synthetic_raw(
    n_train: int = 10_000,
    n_val: int = 1000,
    classes: int = 10,
    size: int = 28,
    noise: float = 0.9,
    seed: int = 7,
) -> RawDataset:
    """Deterministic 10-class toy images: smooth class prototypes plus noise.

    Prototypes are low-frequency random fields (seeded); each sample scales
    its prototype and adds Gaussian pixel noise, then quantizes to uint8.
    """
    rng = np.random.default_rng(seed)
    coarse = rng.normal(size=(classes, size // 4, size // 4))
    protos = np.kron(coarse, np.ones((4, 4)))  # blocky low-frequency fields
    protos /= np.abs(protos).max(axis=(1, 2), keepdims=True)

    def split(n, rng):
        labels = rng.integers(0, classes, size=n)
        gain = rng.uniform(0.7, 1.3, size=(n, 1, 1))
        pix = protos[labels] * gain + rng.normal(scale=noise, size=(n, size, size))
        images = np.clip(128 + 55 * pix, 0, 255).astype(np.uint8)
        return images, labels.astype(np.int64)

    train_images, train_labels = split(n_train, rng)
    val_images, val_labels = split(n_val, rng)
    return RawDataset(train_images, train_labels, val_images, val_labels, classes)


def normalize(raw: RawDataset) -> Dataset:
    """Scale to [0,1], then standardize with train-split statistics."""
    train = raw.train_images.astype(np.float64)[:, None, :, :] / 255.0
    val = raw.val_images.astype(np.float64)[:, None, :, :] / 255.0
    mean = train.mean(axis=(0, 2, 3))
    std = train.std(axis=(0, 2, 3))
    std = np.where(std < 1e-8, 1.0, std)
    train = (train - mean[None, :, None, None]) / std[None, :, None, None]
    val = (val - mean[None, :, None, None]) / std[None, :, None, None]
    return Dataset(
        train_images=train,
        train_labels=raw.train_labels.copy(),
        val_images=val,
        val_labels=raw.val_labels.copy(),
        classes=raw.classes,
        mean=mean,
        std=std,
    )


# ---------------------------------------------------------------------------
# IDX file format (big-endian): magic 0x803 + dims for images, 0x801 for labels.


def write_idx_images(path: str | Path, images: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    if images.ndim != 3:
        raise DatasetError(f"IDX images must be (N, H, W), got {images.shape}")
    with Path(path).open("wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, *images.shape))
        fh.write(images.tobytes())


def write_idx_labels(path: str | Path, labels: np.ndarray) -> None:
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise DatasetError(f"IDX labels must be 1-d, got {labels.shape}")
    with Path(path).open("wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.shape[0]))
        fh.write(labels.astype(np.uint8).tobytes())


def read_idx_images(path: str | Path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if len(blob) < 16:
        raise DatasetError(f"{path}: truncated IDX image header")
    magic, n, h, w = struct.unpack(">IIII", blob[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise DatasetError(
            f"{path}: bad IDX image magic 0x{magic:08x} (expected 0x{IDX_IMAGES_MAGIC:08x})"
        )
    body = blob[16:]
    if len(body) != n * h * w:
        raise DatasetError(f"{path}: payload is {len(body)} bytes, header promises {n * h * w}")
    return np.frombuffer(body, dtype=np.uint8).reshape(n, h, w).copy()


def read_idx_labels(path: str | Path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if len(blob) < 8:
        raise DatasetError(f"{path}: truncated IDX label header")
    magic, n = struct.unpack(">II", blob[:8])
    if magic != IDX_LABELS_MAGIC:
        raise DatasetError(
            f"{path}: bad IDX label magic 0x{magic:08x} (expected 0x{IDX_LABELS_MAGIC:08x})"
        )
    body = blob[8:]
    if len(body) != n:
        raise DatasetError(f"{path}: payload is {len(body)} bytes, header promises {n}")
    return np.frombuffer(body, dtype=np.uint8).astype(np.int64).copy()


def export_idx(raw: RawDataset, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_idx_images(directory / IDX_NAMES["train_images"], raw.train_images)
    write_idx_labels(directory / IDX_NAMES["train_labels"], raw.train_labels)
    write_idx_images(directory / IDX_NAMES["val_images"], raw.val_images)
    write_idx_labels(directory / IDX_NAMES["val_labels"], raw.val_labels)


def ingest(path: str | Path | None, format: str, **synthetic_kw) -> Dataset:
    """Load and normalize a dataset.

    ``format='idx'``: ``path`` is a directory holding the four standard IDX
    files. ``format='synthetic'``: ``path`` is ignored and the generator
    keywords (n_train, n_val, classes, size, noise, seed) apply.
    """
    if format == "synthetic":
        return normalize(synthetic_raw(**synthetic_kw))
    if format != "idx":
        raise DatasetError(f"unknown dataset format {format!r}; use 'idx' or 'synthetic'")
    directory = Path(path or ".")
    raw = RawDataset(
        train_images=read_idx_images(directory / IDX_NAMES["train_images"]),
        train_labels=read_idx_labels(directory / IDX_NAMES["train_labels"]),
        val_images=read_idx_images(directory / IDX_NAMES["val_images"]),
        val_labels=read_idx_labels(directory / IDX_NAMES["val_labels"]),
        classes=0,
    )
    if len(raw.train_images) != len(raw.train_labels):
        raise DatasetError(
            f"train split: {len(raw.train_images)} images vs {len(raw.train_labels)} labels"
        )
    if len(raw.val_images) != len(raw.val_labels):
        raise DatasetError(
            f"validation split: {len(raw.val_images)} images vs {len(raw.val_labels)} labels"
        )
    raw.classes = int(max(raw.train_labels.max(), raw.val_labels.max())) + 1
    return normalize(raw)


# ---------------------------------------------------------------------------
# Plain model training (retraining phase)


def init_model(
    template: ArchTemplate, nev: Sequence[int], rng: np.random.Generator
) -> tuple[tuple[int, ...], list[dict[str, Tensor]], list[dict[str, Tensor]]]:
    """Fresh trainable parameters for one NEV's model: kernels, biases, affines."""
    nev = validate_nev(template, nev)
    channels = tuple(
        channels_of(template, nev, i) for i in range(len(template.layers))
    )
    weights: list[dict[str, Tensor]] = []
    affine: list[dict[str, Tensor]] = []
    for idx, layer in enumerate(template.layers):
        crop_sizes, c_out = hn.slice_sizes(template, nev, idx)
        full = hn.full_kernel_shape(template, idx)
        shape = tuple(crop_sizes) + tuple(full[len(crop_sizes):])
        if layer.kind == "dense":
            fan_in = shape[0]
        elif layer.kind == "depthwise":
            fan_in = layer.kernel[0] * layer.kernel[1]
        else:
            fan_in = shape[1] * layer.kernel[0] * layer.kernel[1]
        entry = {"kernel": parameter(uniform_init(rng, shape, fan_in))}
        if layer.bias:
            entry["bias"] = parameter(uniform_init(rng, (c_out,), fan_in))
        weights.append(entry)
        affine.append(
            {"gamma": parameter(np.ones(c_out)), "beta": parameter(np.zeros(c_out))}
            if layer.norm
            else {}
        )
    return channels, weights, affine


def _model_params(weights, affine) -> list[Tensor]:
    params = []
    for entry in weights:
        params.extend(entry.values())
    for entry in affine:
        params.extend(entry.values())
    return params


class DivergenceError(OptimizerError):
    """Training loss turned non-finite; carries the last finished epoch's state."""

    def __init__(self, message: str, last_checkpoint: dict[str, np.ndarray]):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint


def train_model(
    template: ArchTemplate,
    nev: Sequence[int],
    dataset: Dataset,
    epochs: int,
    schedule: Schedule,
    rng: np.random.Generator,
    batch_size: int = 64,
    calibration_size: int = 256,
) -> tuple[tuple[int, ...], list[dict], list[dict], dict, list[dict]]:
    """Standard training of one NEV's model from fresh initialization.

    Returns (channels, weights, affine, calibrated stats, per-epoch log).
    A non-finite loss aborts with ``DivergenceError`` carrying the last
    finished epoch's parameters.
    """
    channels, weights, affine = init_model(template, nev, rng)
    params = _model_params(weights, affine)
    n = len(dataset.train_images)
    log: list[dict] = []

    def snap():  # sgd mutates arrays in place, so keep copies
        return {k: v.copy() for k, v in
                model_tensors(template, channels, weights, affine, {}).items()}

    snapshot = snap()
    for epoch in range(epochs):
        order = rng.permutation(n)
        losses = []
        for lo in range(0, n, batch_size):
            idx = order[lo : lo + batch_size]
            logits = hn.forward_network(
                template, channels, weights, Tensor(dataset.train_images[idx]),
                affine=affine,
            )
            loss = softmax_cross_entropy(logits, dataset.train_labels[idx])
            if not np.isfinite(loss.data):
                raise DivergenceError(
                    f"training diverged at epoch {epoch} (loss {float(loss.data)}); "
                    "lower the learning rate",
                    last_checkpoint=snapshot,
                )
            zero_grads(params)
            backward(loss)
            try:
                lr = sgd_step(params, schedule, epoch)
            except OptimizerError as exc:
                raise DivergenceError(
                    f"training diverged at epoch {epoch}: {exc}", last_checkpoint=snapshot
                ) from exc
            losses.append(float(loss.data))
        log.append({"epoch": epoch, "mean_loss": float(np.mean(losses)), "lr": lr})
        snapshot = snap()
        logger.info("retrain epoch %d: loss %.4f lr %.3g", epoch, log[-1]["mean_loss"], lr)
    calib = dataset.train_images[: min(calibration_size, n)]
    stats = hn.calibrate_stats(template, channels, weights, calib, affine=affine)
    return channels, weights, affine, stats, log


@dataclass
class RunReport:
    """Final metrics of one pipeline run."""

    template: str
    best_nev: tuple[int, ...]
    accuracy: float
    top1_error: float
    top5_error: float
    flops: int
    baseline_flops: int
    params: int
    baseline_params: int
    param_ratio: float
    best_reward: float | None
    seed: int
    timings: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "schema": REPORT_SCHEMA,
            "template": self.template,
            "best_nev": list(self.best_nev),
            "accuracy": self.accuracy,
            "top1_error": self.top1_error,
            "top5_error": self.top5_error,
            "flops": self.flops,
            "baseline_flops": self.baseline_flops,
            "params": self.params,
            "baseline_params": self.baseline_params,
            "param_ratio": self.param_ratio,
            "best_reward": self.best_reward,
            "seed": self.seed,
            "timings": self.timings,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RunReport":
        if doc.get("schema") != REPORT_SCHEMA:
            raise MetapruneError(f"unsupported report schema {doc.get('schema')!r}")
        return cls(
            template=doc["template"],
            best_nev=tuple(doc["best_nev"]),
            accuracy=doc["accuracy"],
            top1_error=doc["top1_error"],
            top5_error=doc["top5_error"],
            flops=doc["flops"],
            baseline_flops=doc["baseline_flops"],
            params=doc["params"],
            baseline_params=doc["baseline_params"],
            param_ratio=doc["param_ratio"],
            best_reward=doc.get("best_reward"),
            seed=doc["seed"],
            timings=doc.get("timings", {}),
        )


def top_k_errors(logits: np.ndarray, labels: np.ndarray, ks=(1, 5)) -> dict[int, float]:
    """Fraction of samples whose true label misses the k highest scores.

    k is clamped to the class count, so top-5 on a 3-class problem means
    top-3.
    """
    n, classes = logits.shape
    order = np.argsort(-logits, axis=1)
    out = {}
    for k in ks:
        kk = min(k, classes)
        hit = (order[:, :kk] == labels[:, None]).any(axis=1)
        out[k] = float(1.0 - hit.mean())
    return out


def metrics(
    template: ArchTemplate,
    nev: Sequence[int],
    channels: Sequence[int],
    weights: Sequence[dict],
    affine: Sequence[dict],
    stats: dict,
    dataset: Dataset,
    seed: int,
    best_reward: float | None = None,
    batch_size: int = 500,
) -> RunReport:
    """Score a trained model on the validation split and assemble the report."""
    logits = hn.predict_logits(
        template, channels, weights, dataset.val_images, stats,
        affine=affine, batch_size=batch_size,
    )
    errors = top_k_errors(logits, dataset.val_labels)
    nev = validate_nev(template, nev)
    p = params_of(template, nev)
    p_base = baseline_params(template)
    return RunReport(
        template=template.name,
        best_nev=nev,
        accuracy=1.0 - errors[1],
        top1_error=errors[1],
        top5_error=errors[5],
        flops=flops_of(template, nev),
        baseline_flops=baseline_flops(template),
        params=p,
        baseline_params=p_base,
        param_ratio=param_ratio(p, p_base),
        best_reward=best_reward,
        seed=seed,
    )


def retrain(
    best_nev: Sequence[int],
    template: ArchTemplate,
    dataset: Dataset,
    epochs: int,
    schedule: Schedule,
    rng: np.random.Generator,
    batch_size: int = 64,
    seed: int = 0,
    best_reward: float | None = None,
) -> tuple[dict[str, np.ndarray], RunReport]:
    """Train the winning NEV from scratch and report validation metrics.

    No hypernetwork weights are involved: fresh initialization removes the
    bias of the meta-trained generators.
    """
    channels, weights, affine, stats, _ = train_model(
        template, best_nev, dataset, epochs, schedule, rng, batch_size=batch_size
    )
    report = metrics(
        template, best_nev, channels, weights, affine, stats, dataset,
        seed=seed, best_reward=best_reward,
    )
    tensors = model_tensors(template, channels, weights, affine, stats)
    return tensors, report


def model_tensors(template, channels, weights, affine, stats) -> dict[str, np.ndarray]:
    """Flatten a trained model into named arrays for checkpointing."""
    out: dict[str, np.ndarray] = {"__channels__": np.asarray(channels, dtype=np.float64)}
    for idx, entry in enumerate(weights):
        for name, tensor in entry.items():
            out[f"layer{idx}.{name}"] = tensor.data
    for idx, entry in enumerate(affine):
        for name, tensor in entry.items():
            out[f"layer{idx}.{name}"] = tensor.data
    for idx, (mu, var) in stats.items():
        out[f"layer{idx}.running_mean"] = mu
        out[f"layer{idx}.running_var"] = var
    return out


# ---------------------------------------------------------------------------
# Full pipeline


@dataclass(frozen=True)
class PhaseEpochs:
    """Algorithm hyperparameters: epochs per phase."""

    max_training: int = 64  # meta-training epochs
    max_iter: int = 20      # search epochs
    max_tuning: int = 30    # retraining epochs


def phase_rng(seed: int, phase: str) -> np.random.Generator:
    codes = {"meta": 1, "search": 2, "retrain": 3, "baseline": 4}
    return np.random.default_rng(np.random.SeedSequence((seed, codes[phase])))


def save_gene(path: str | Path, gene: Gene) -> None:
    doc = {
        "schema": GENE_SCHEMA,
        "nev": list(gene.nev),
        "flops": gene.flops,
        "accuracy": gene.accuracy,
        "reward": gene.reward,
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_gene(path: str | Path) -> Gene:
    doc = json.loads(Path(path).read_text())
    if doc.get("schema") != GENE_SCHEMA:
        raise MetapruneError(f"unsupported gene schema {doc.get('schema')!r}")
    return Gene(
        nev=tuple(doc["nev"]),
        flops=doc["flops"],
        accuracy=doc["accuracy"],
        reward=doc["reward"],
    )


def meta_history_to_csv(path: str | Path, log: Sequence[dict]) -> None:
    with Path(path).open("w", newline="") as fh:
        fh.write(f"# schema: {META_HISTORY_SCHEMA}\n")
        writer = csv.writer(fh)
        writer.writerow(["epoch", "mean_loss", "lr", "val_accuracy"])
        for rec in log:
            writer.writerow(
                [rec["epoch"], repr(rec["mean_loss"]), repr(rec["lr"]),
                 repr(rec.get("val_accuracy", float("nan")))]
            )


def default_meta_schedule(epochs: PhaseEpochs) -> Schedule:
    return Schedule(
        kind="milestone-decay", initial_lr=1.0, gamma=0.1,
        milestones=(max(1, int(epochs.max_training * 0.7)),
                    max(2, int(epochs.max_training * 0.9))),
    )


def default_tune_schedule(epochs: PhaseEpochs) -> Schedule:
    return Schedule(
        kind="milestone-decay", initial_lr=1.0, gamma=0.1,
        milestones=(max(1, int(epochs.max_tuning * 0.6)),
                    max(2, int(epochs.max_tuning * 0.85))),
    )


def meta_phase(
    template: ArchTemplate,
    dataset: Dataset,
    out_dir: str | Path,
    *,
    epochs: int,
    schedule: Schedule,
    seed: int,
    batch_size: int = 64,
    hidden: int = 64,
    calibration_size: int = 256,
    resume: bool = True,
) -> hn.HyperNet:
    """Train (or reload) the weight generators; persists hypernet.ckpt."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "hypernet.ckpt"
    if resume and ckpt.exists():
        logger.info("resuming: loading %s", ckpt)
        return hn.load_hypernet(ckpt, template)
    h = hn.HyperNet(template, hidden=hidden, rng=phase_rng(seed, "meta"))
    log = hn.meta_train(
        h, dataset.train_images, dataset.train_labels,
        epochs, schedule, phase_rng(seed, "meta"), batch_size=batch_size,
        val_images=dataset.val_images, val_labels=dataset.val_labels,
        calibration_size=calibration_size,
    )
    hn.save_hypernet(ckpt, h)
    meta_history_to_csv(out / "meta_history.csv", log)
    return h


def search_phase(
    template: ArchTemplate,
    dataset: Dataset,
    out_dir: str | Path,
    h: hn.HyperNet,
    *,
    search: SearchConfig,
    reward_params: RewardParams,
    calibration_size: int = 256,
    workers: int = 1,
    resume: bool = True,
) -> Gene:
    """Search NEVs with the hypernet as fitness oracle; persists best_gene.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    gene_path = out / "best_gene.json"
    if resume and gene_path.exists():
        logger.info("resuming: loading %s", gene_path)
        return load_gene(gene_path)
    calib = dataset.train_images[: min(calibration_size, len(dataset.train_images))]

    def fitness(nev):
        return hn.evaluate_nev(
            h, nev, dataset.val_images, dataset.val_labels, calib, batch_size=500
        )

    best, history = run_search(template, search, fitness, reward_params, workers=workers)
    history_to_csv(out / "search_history.csv", history)
    save_gene(gene_path, best)
    return best


def retrain_phase(
    template: ArchTemplate,
    dataset: Dataset,
    out_dir: str | Path,
    best: Gene,
    *,
    epochs: int,
    schedule: Schedule,
    seed: int,
    batch_size: int = 64,
    resume: bool = True,
) -> RunReport:
    """Retrain the winner from scratch; persists model.ckpt and report.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report_path = out / "report.json"
    if resume and report_path.exists():
        logger.info("resuming: loading %s", report_path)
        return RunReport.from_dict(json.loads(report_path.read_text()))
    try:
        tensors, report = retrain(
            best.nev, template, dataset, epochs, schedule,
            phase_rng(seed, "retrain"), batch_size=batch_size, seed=seed,
            best_reward=best.reward,
        )
    except DivergenceError as exc:
        save_checkpoint(out / "model.diverged.ckpt", exc.last_checkpoint)
        logger.error("%s; last finished epoch saved to model.diverged.ckpt", exc)
        raise
    save_checkpoint(out / "model.ckpt", tensors)
    report_path.write_text(json.dumps(report.to_dict(), indent=1) + "\n")
    return report


def default_search_config(template: ArchTemplate, epochs: PhaseEpochs, seed: int) -> SearchConfig:
    base_f = baseline_flops(template)
    return SearchConfig(
        min_flops=0.30 * base_f, max_flops=0.65 * base_f, seed=seed,
        epochs=epochs.max_iter,
    )


def default_reward_params(template: ArchTemplate) -> RewardParams:
    return RewardParams(
        baseline_accuracy=0.995, baseline_flops=baseline_flops(template) * 1.02
    )


def run_all(
    template: ArchTemplate,
    dataset: Dataset,
    out_dir: str | Path,
    *,
    epochs: PhaseEpochs = PhaseEpochs(),
    search: SearchConfig | None = None,
    reward_params: RewardParams | None = None,
    meta_schedule: Schedule | None = None,
    tune_schedule: Schedule | None = None,
    seed: int = 0,
    batch_size: int = 64,
    hidden: int = 64,
    calibration_size: int = 256,
    workers: int = 1,
    resume: bool = True,
) -> RunReport:
    """meta-train -> search -> retrain, persisting artifacts along the way.

    With ``resume=True`` (the default) a phase whose artifact already
    exists in ``out_dir`` is loaded instead of recomputed, which both
    resumes interrupted runs and lets phases be driven individually.
    Phase RNG streams derive from (seed, phase), so resumed and
    uninterrupted runs produce identical results.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if reward_params is None:
        reward_params = default_reward_params(template)
    if search is None:
        search = default_search_config(template, epochs, seed)
    if meta_schedule is None:
        meta_schedule = default_meta_schedule(epochs)
    if tune_schedule is None:
        tune_schedule = default_tune_schedule(epochs)

    timings: dict[str, float] = {}
    t0 = time.perf_counter()
    h = meta_phase(
        template, dataset, out, epochs=epochs.max_training, schedule=meta_schedule,
        seed=seed, batch_size=batch_size, hidden=hidden,
        calibration_size=calibration_size, resume=resume,
    )
    timings["meta_train_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    best = search_phase(
        template, dataset, out, h, search=search, reward_params=reward_params,
        calibration_size=calibration_size, workers=workers, resume=resume,
    )
    timings["search_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    already = resume and (out / "report.json").exists()
    report = retrain_phase(
        template, dataset, out, best, epochs=epochs.max_tuning,
        schedule=tune_schedule, seed=seed, batch_size=batch_size, resume=resume,
    )
    timings["retrain_s"] = time.perf_counter() - t0
    if not already:
        report.timings = timings
        (out / "report.json").write_text(json.dumps(report.to_dict(), indent=1) + "\n")
    return report
