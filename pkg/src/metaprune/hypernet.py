"""Hypernetwork weight generation and stochastic meta-training.

One generator per template layer: the normalized NEV (slot indices mapped
to their grid fractions) feeds two fully-connected stages whose output is
a flat buffer sized for the layer's full-width weight tensor. The buffer
is reshaped and cropped along leading channel indices (output channels
first, then input channels) to the widths the NEV selects, so every NEV
slices one model out of a shared generator. Crops stay connected to the
autodiff graph, which is what lets cross-entropy gradients from the sliced
model train the generator parameters.

Meta-training draws a fresh uniform random NEV per batch over the full
grid (the FLOPs window only constrains the later search), builds the
slice, and applies one SGD step to the generator parameters. Generator
parameters are the *only* trainable state in this phase: normalization
layers run on batch statistics with fixed unit scale and zero shift.
Validation data never drives an update; it is only logged to watch
progress.

Evaluating a NEV recomputes per-slice normalization statistics from one
calibration pass (full-width statistics would be wrong for a slice), then
scores the sliced model on the validation set without touching any
parameter.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .arch import ArchTemplate, LayerSpec, channels_of, random_nev, validate_nev
from .errors import CheckpointError, DatasetError, MetapruneError
from .tensorcore import (
    Schedule,
    Tensor,
    backward,
    batch_channel_stats,
    channel_norm_affine,
    conv2d,
    crop,
    dense,
    depthwise_conv2d,
    global_avg_pool,
    load_checkpoint,
    narrow,
    parameter,
    relu,
    reshape,
    save_checkpoint,
    sgd_step,
    softmax_cross_entropy,
    uniform_init,
    zero_grads,
)

logger = logging.getLogger(__name__)

_MANIFEST_KEY = "__manifest__"


def normalize_nev(template: ArchTemplate, nev: Sequence[int]) -> np.ndarray:
    """Map slot indices to their grid fractions in [0.10, 1.00].

    Injective on distinct NEVs because the grid is strictly increasing.
    """
    nev = validate_nev(template, nev)
    levels = template.grid.levels
    return np.array([levels[v] for v in nev], dtype=np.float64)


def full_kernel_shape(template: ArchTemplate, idx: int) -> tuple[int, ...]:
    layer = template.layers[idx]
    src = layer.in_source
    c_in = template.input_shape[0] if src == -1 else template.layers[src].base_width
    kh, kw = layer.kernel
    if layer.kind == "dense":
        return (c_in, layer.base_width)
    if layer.kind == "depthwise":
        return (layer.base_width, kh, kw)
    return (layer.base_width, c_in, kh, kw)


def slice_sizes(
    template: ArchTemplate, nev: Sequence[int], idx: int
) -> tuple[tuple[int, ...], int]:
    """(leading crop sizes for the kernel, sliced output width) of one layer."""
    layer = template.layers[idx]
    c_out = channels_of(template, nev, idx)
    src = layer.in_source
    c_in = template.input_shape[0] if src == -1 else channels_of(template, nev, src)
    if layer.kind == "dense":
        return (c_in, c_out), c_out
    if layer.kind == "depthwise":
        return (c_out,), c_out
    return (c_out, c_in), c_out


@dataclass
class LayerGenerator:
    """Two fully-connected stages emitting one layer's full-width weights."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    kernel_shape: tuple[int, ...]
    bias_size: int

    @property
    def params(self) -> list[Tensor]:
        return [self.w1, self.b1, self.w2, self.b2]


class HyperNet:
    """Per-layer weight generators for one template."""

    def __init__(self, template: ArchTemplate, hidden: int = 64,
                 rng: np.random.Generator | None = None):
        if rng is None:
            rng = np.random.default_rng(0)
        self.template = template
        self.hidden = hidden
        self.generators: list[LayerGenerator] = []
        n_in = template.nev_length
        for idx, layer in enumerate(template.layers):
            kshape = full_kernel_shape(template, idx)
            bias_size = layer.base_width if layer.bias else 0
            out_elems = int(np.prod(kshape)) + bias_size
            self.generators.append(
                LayerGenerator(
                    w1=parameter(uniform_init(rng, (n_in, hidden), fan_in=n_in)),
                    b1=parameter(uniform_init(rng, (hidden,), fan_in=n_in)),
                    w2=parameter(uniform_init(rng, (hidden, out_elems), fan_in=hidden)),
                    b2=parameter(uniform_init(rng, (out_elems,), fan_in=hidden)),
                    kernel_shape=kshape,
                    bias_size=bias_size,
                )
            )

    @property
    def params(self) -> list[Tensor]:
        return [p for gen in self.generators for p in gen.params]


@dataclass
class SlicedModel:
    """One pruned model cut from the generated full-width weights."""

    nev: tuple[int, ...]
    channels: tuple[int, ...]
    weights: list[dict[str, Tensor]]


def generate_weights(h: HyperNet, nev: Sequence[int]) -> SlicedModel:
    """Run every generator and crop its output to the NEV's widths.

    Deterministic given the generator parameters; the sliced tensors remain
    views into the autodiff graph, so losses on them reach the generators.
    """
    template = h.template
    nev = validate_nev(template, nev)
    nvec = Tensor(normalize_nev(template, nev).reshape(1, -1))
    weights: list[dict[str, Tensor]] = []
    channels = tuple(channels_of(template, nev, i) for i in range(len(template.layers)))
    for idx, gen in enumerate(h.generators):
        hid = relu(dense(nvec, gen.w1, gen.b1))
        flat = reshape(dense(hid, gen.w2, gen.b2), (-1,))
        k_elems = int(np.prod(gen.kernel_shape))
        kernel = reshape(narrow(flat, 0, k_elems), gen.kernel_shape)
        crop_sizes, c_out = slice_sizes(template, nev, idx)
        entry = {"kernel": crop(kernel, crop_sizes)}
        if gen.bias_size:
            bias = narrow(flat, k_elems, k_elems + gen.bias_size)
            entry["bias"] = crop(bias, (c_out,))
        weights.append(entry)
    return SlicedModel(nev=nev, channels=channels, weights=weights)


def _constant_affine(c: int) -> tuple[Tensor, Tensor]:
    return Tensor(np.ones(c)), Tensor(np.zeros(c))


def forward_network(
    template: ArchTemplate,
    channels: Sequence[int],
    weights: Sequence[dict[str, Tensor]],
    x: Tensor,
    *,
    affine: Sequence[dict[str, Tensor]] | None = None,
    stats: dict[int, tuple[np.ndarray, np.ndarray]] | None = None,
    collect_stats: dict[int, tuple[np.ndarray, np.ndarray]] | None = None,
) -> Tensor:
    """Run a batch through a template given per-layer weights.

    Normalization modes: batch statistics (default, training), fixed
    ``stats`` (evaluation), or ``collect_stats`` (calibration: use batch
    statistics and record them per layer). ``affine`` supplies trainable
    scale/shift pairs; absent entries fall back to unit scale, zero shift.
    Supports sequential templates; layers with a post-pool are not
    executable here (they only occur in the analytic-only templates).
    """
    outputs: list[Tensor] = []
    for idx, layer in enumerate(template.layers):
        if layer.pool != 1:
            raise MetapruneError(
                f"layer {layer.name!r} uses post-pooling; template {template.name!r} "
                "is analytic-only and cannot be executed"
            )
        inp = x if layer.in_source == -1 else outputs[layer.in_source]
        lw = weights[idx]
        if layer.kind == "dense":
            if inp.data.ndim == 4:
                inp = global_avg_pool(inp)
            y = dense(inp, lw["kernel"], lw.get("bias"))
        else:
            pad = ((layer.kernel[0] - 1) // 2, (layer.kernel[1] - 1) // 2)
            if layer.kind == "depthwise":
                y = depthwise_conv2d(inp, lw["kernel"], stride=layer.stride, padding=pad)
            else:
                y = conv2d(inp, lw["kernel"], stride=layer.stride, padding=pad)
        if layer.norm:
            if affine is not None and "gamma" in (affine[idx] or {}):
                gamma, beta = affine[idx]["gamma"], affine[idx]["beta"]
            else:
                gamma, beta = _constant_affine(channels[idx])
            if collect_stats is not None:
                mu, var = batch_channel_stats(y.data)
                collect_stats[idx] = (mu, var)
                y = channel_norm_affine(y, gamma, beta, mean=mu, var=var)
            elif stats is not None:
                mu, var = stats[idx]
                y = channel_norm_affine(y, gamma, beta, mean=mu, var=var)
            else:
                y = channel_norm_affine(y, gamma, beta)
        if layer.act == "relu":
            y = relu(y)
        outputs.append(y)
    return outputs[-1]


def calibrate_stats(
    template: ArchTemplate,
    channels: Sequence[int],
    weights: Sequence[dict[str, Tensor]],
    calibration_images: np.ndarray,
    affine: Sequence[dict[str, Tensor]] | None = None,
) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """One forward pass over a calibration batch, recording per-layer stats."""
    stats: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    forward_network(
        template, channels, weights, Tensor(calibration_images),
        affine=affine, collect_stats=stats,
    )
    return stats


def _detached(model: SlicedModel) -> list[dict[str, Tensor]]:
    return [
        {name: Tensor(t.data) for name, t in entry.items()}
        for entry in model.weights
    ]


def predict_logits(
    template: ArchTemplate,
    channels: Sequence[int],
    weights: Sequence[dict[str, Tensor]],
    images: np.ndarray,
    stats: dict[int, tuple[np.ndarray, np.ndarray]],
    affine: Sequence[dict[str, Tensor]] | None = None,
    batch_size: int = 256,
) -> np.ndarray:
    """Inference over fixed statistics, batched; returns (N, classes) logits."""
    chunks = []
    for lo in range(0, len(images), batch_size):
        batch = Tensor(images[lo : lo + batch_size])
        logits = forward_network(
            template, channels, weights, batch, affine=affine, stats=stats
        )
        chunks.append(logits.data)
    return np.concatenate(chunks, axis=0)


def evaluate_nev(
    h: HyperNet,
    nev: Sequence[int],
    val_images: np.ndarray,
    val_labels: np.ndarray,
    calibration_images: np.ndarray,
    batch_size: int = 256,
) -> float:
    """Inference-only accuracy of one sliced model on the validation set.

    Recomputes per-slice normalization statistics from the calibration
    batch first; never mutates any parameter, so many NEVs may be scored
    concurrently over one generator snapshot.
    """
    if len(val_images) == 0:
        raise DatasetError("evaluate_nev: empty validation set")
    model = generate_weights(h, nev)
    weights = _detached(model)
    stats = calibrate_stats(h.template, model.channels, weights, calibration_images)
    logits = predict_logits(
        h.template, model.channels, weights, val_images, stats, batch_size=batch_size
    )
    return float((logits.argmax(axis=1) == val_labels).mean())


def meta_train(
    h: HyperNet,
    train_images: np.ndarray,
    train_labels: np.ndarray,
    epochs: int,
    schedule: Schedule,
    rng: np.random.Generator,
    batch_size: int = 64,
    val_images: np.ndarray | None = None,
    val_labels: np.ndarray | None = None,
    calibration_size: int = 256,
) -> list[dict]:
    """Stochastic meta-training: a fresh random NEV slices the model per batch.

    Returns a per-epoch progress log (mean loss, learning rate, and the
    validation accuracy of one random NEV when validation data is given).
    With ``epochs=0`` the parameters are untouched and the log is empty.
    """
    n = len(train_images)
    if n == 0:
        raise DatasetError("meta_train: empty training set")
    calibration = train_images[: min(calibration_size, n)]
    log: list[dict] = []
    for epoch in range(epochs):
        order = rng.permutation(n)
        losses = []
        for lo in range(0, n, batch_size):
            idx = order[lo : lo + batch_size]
            nev = random_nev(h.template, rng)
            model = generate_weights(h, nev)
            logits = forward_network(
                h.template, model.channels, model.weights, Tensor(train_images[idx])
            )
            loss = softmax_cross_entropy(logits, train_labels[idx])
            zero_grads(h.params)
            backward(loss)
            lr = sgd_step(h.params, schedule, epoch)
            losses.append(float(loss.data))
        record = {"epoch": epoch, "mean_loss": float(np.mean(losses)), "lr": lr}
        if val_images is not None and len(val_images):
            probe = random_nev(h.template, rng)
            record["val_accuracy"] = evaluate_nev(
                h, probe, val_images, val_labels, calibration
            )
            record["val_nev"] = list(probe)
        log.append(record)
        logger.info(
            "meta-train epoch %d: loss %.4f lr %.3g val %.3f",
            epoch, record["mean_loss"], record["lr"], record.get("val_accuracy", float("nan")),
        )
    return log


# ---------------------------------------------------------------------------
# Checkpointing: tensorcore binary format plus a manifest entry that pins
# the template name and scale-grid hash; loading against a mismatched
# template is an error.


def _manifest_array(h: HyperNet) -> np.ndarray:
    doc = {
        "template": h.template.name,
        "grid": h.template.grid.digest(),
        "hidden": h.hidden,
        "nev_length": h.template.nev_length,
    }
    return np.frombuffer(json.dumps(doc, sort_keys=True).encode(), dtype=np.uint8).astype(
        np.float64
    )


def _decode_manifest(arr: np.ndarray) -> dict:
    try:
        return json.loads(arr.astype(np.uint8).tobytes().decode())
    except (ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"unreadable hypernet manifest: {exc}") from exc


def save_hypernet(path: str | Path, h: HyperNet) -> None:
    tensors: dict[str, np.ndarray] = {_MANIFEST_KEY: _manifest_array(h)}
    for idx, gen in enumerate(h.generators):
        for name in ("w1", "b1", "w2", "b2"):
            tensors[f"gen{idx}.{name}"] = getattr(gen, name).data
    save_checkpoint(path, tensors)


def load_hypernet(path: str | Path, template: ArchTemplate) -> HyperNet:
    tensors = load_checkpoint(path)
    if _MANIFEST_KEY not in tensors:
        raise CheckpointError(f"{path} is not a hypernet checkpoint (no manifest)")
    manifest = _decode_manifest(tensors[_MANIFEST_KEY])
    if manifest.get("template") != template.name or manifest.get("grid") != template.grid.digest():
        raise CheckpointError(
            f"checkpoint {path} was trained for template {manifest.get('template')!r} "
            f"(grid {manifest.get('grid')}), not {template.name!r}"
        )
    h = HyperNet(template, hidden=int(manifest["hidden"]))
    for idx, gen in enumerate(h.generators):
        for name in ("w1", "b1", "w2", "b2"):
            key = f"gen{idx}.{name}"
            if key not in tensors:
                raise CheckpointError(f"checkpoint {path} missing tensor {key}")
            current = getattr(gen, name)
            if tensors[key].shape != current.data.shape:
                raise CheckpointError(
                    f"checkpoint tensor {key} has shape {tensors[key].shape}, "
                    f"expected {current.data.shape}"
                )
            current.data = tensors[key]
    return h
