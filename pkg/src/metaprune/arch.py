"""Architecture templates and analytic cost models.

A template is a static description of a CNN family: an ordered list of layer
specs plus a slot map that ties groups of layers to entries of a network
encoding vector (NEV). Each NEV entry is an index into a 31-point channel
scale grid running from 10% to 100% of the base width, so a NEV selects one
pruned member of the family. Everything here is pure arithmetic on the
template: channel counts, multiply-accumulate (MAC) totals, and parameter
counts at any NEV, with no tensors involved.

Templates are data, not code. They ship as JSON files (see ``templates/``)
and the schema is documented in ``TEMPLATE_SCHEMA`` below.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import TemplateError

GRID_SIZE = 31

LAYER_KINDS = ("conv", "depthwise", "pointwise", "dense")
ACTIVATIONS = ("relu", "none")

#: JSON template schema, version 1. Top level:
#:   schema           "metaprune/template/v1"
#:   name             identifier
#:   input_shape      [C, H, W]
#:   layers           list of layer objects (order = execution order)
#:   slots            list of {"name": str, "layers": [int, ...]}; position = NEV slot
#:   shortcut_groups  list of [int, ...]; members must share one slot
#: Layer object:
#:   name         identifier
#:   kind         one of "conv" | "depthwise" | "pointwise" | "dense"
#:   base_width   output channels (dense: output features) at full width
#:   in           index of the producing layer, -1 for the network input
#:   kernel       [kh, kw]            (conv kinds; dense omits)
#:   stride       int >= 1            (conv kinds)
#:   spatial_out  [H, W] of this layer's own output, before any pooling
#:   pool         int >= 1, post-layer spatial downsampling factor (default 1)
#:   prunable     bool; non-prunable layers always run at base_width
#:   norm         bool; per-channel affine normalization follows the layer
#:   act          "relu" | "none"
#:   bias         bool
TEMPLATE_SCHEMA = "metaprune/template/v1"

_BUILTIN_NAMES = ("resnet50", "mobilenet_v1", "mobilenet_v2", "mininet")


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class ScaleGrid:
    """The 31-point channel width grid: 0.10, 0.13, ... 1.00."""

    levels: tuple[float, ...]

    def __post_init__(self) -> None:
        lv = self.levels
        if len(lv) != GRID_SIZE:
            raise TemplateError(f"scale grid must have {GRID_SIZE} levels, got {len(lv)}")
        if abs(lv[0] - 0.10) > 1e-12 or abs(lv[-1] - 1.00) > 1e-12:
            raise TemplateError("scale grid must run from 0.10 to 1.00")
        steps = [b - a for a, b in zip(lv, lv[1:])]
        if any(s <= 0 for s in steps):
            raise TemplateError("scale grid levels must be strictly increasing")
        if max(steps) - min(steps) > 1e-9:
            raise TemplateError("scale grid levels must be uniformly spaced")

    @classmethod
    def default(cls) -> "ScaleGrid":
        return cls(tuple((10 + 3 * i) / 100 for i in range(GRID_SIZE)))

    def level(self, index: int) -> float:
        if not 0 <= index < GRID_SIZE:
            raise TemplateError(f"scale index {index} outside [0, {GRID_SIZE - 1}]")
        return self.levels[index]

    def digest(self) -> str:
        """Stable hash of the grid, used to guard checkpoint/template pairing."""
        raw = ",".join(repr(v) for v in self.levels).encode()
        return hashlib.sha256(raw).hexdigest()[:16]


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a template; see TEMPLATE_SCHEMA for field meanings."""

    name: str
    kind: str
    base_width: int
    in_source: int
    spatial_out: tuple[int, int]
    kernel: tuple[int, int] = (1, 1)
    stride: int = 1
    pool: int = 1
    prunable: bool = True
    norm: bool = True
    act: str = "relu"
    bias: bool = False

    def __post_init__(self) -> None:
        if self.kind not in LAYER_KINDS:
            raise TemplateError(f"layer {self.name!r}: unknown kind {self.kind!r}")
        if self.act not in ACTIVATIONS:
            raise TemplateError(f"layer {self.name!r}: unknown activation {self.act!r}")
        if self.base_width < 1:
            raise TemplateError(f"layer {self.name!r}: base_width must be >= 1")
        if self.stride < 1 or self.pool < 1:
            raise TemplateError(f"layer {self.name!r}: stride and pool must be >= 1")
        if any(k < 1 for k in self.kernel):
            raise TemplateError(f"layer {self.name!r}: kernel dims must be >= 1")
        if self.kind == "pointwise" and self.kernel != (1, 1):
            raise TemplateError(f"layer {self.name!r}: pointwise layers use a 1x1 kernel")

    @property
    def feed_spatial(self) -> tuple[int, int]:
        """Spatial size this layer presents to its consumers (after pooling)."""
        h, w = self.spatial_out
        return (-(-h // self.pool), -(-w // self.pool))


@dataclass(frozen=True)
class ArchTemplate:
    """A CNN family: layers, slot map, and shortcut constraints.

    ``slots[k]`` lists the layer indices whose width is controlled by NEV
    entry ``k``. Slots partition the prunable layers. Shortcut groups are
    sets of layers whose outputs are combined by residual additions; their
    members must live in one slot so sliced channel counts always agree.
    """

    name: str
    input_shape: tuple[int, int, int]
    layers: tuple[LayerSpec, ...]
    slots: tuple[tuple[int, ...], ...]
    slot_names: tuple[str, ...] = ()
    shortcut_groups: tuple[tuple[int, ...], ...] = ()
    grid: ScaleGrid = field(default_factory=ScaleGrid.default)

    def __post_init__(self) -> None:
        n = len(self.layers)
        if n == 0:
            raise TemplateError("template has no layers")
        if len(self.input_shape) != 3 or any(v < 1 for v in self.input_shape):
            raise TemplateError("input_shape must be (C, H, W) with positive dims")
        if self.slot_names and len(self.slot_names) != len(self.slots):
            raise TemplateError("slot_names length must match slots")

        seen: dict[int, int] = {}
        for k, members in enumerate(self.slots):
            if not members:
                raise TemplateError(f"slot {k} is empty")
            for idx in members:
                if not 0 <= idx < n:
                    raise TemplateError(f"slot {k} references layer {idx} out of range")
                if not self.layers[idx].prunable:
                    raise TemplateError(f"slot {k} includes non-prunable layer {idx}")
                if idx in seen:
                    raise TemplateError(f"layer {idx} appears in slots {seen[idx]} and {k}")
                seen[idx] = k
        for idx, layer in enumerate(self.layers):
            if layer.prunable and idx not in seen:
                raise TemplateError(f"prunable layer {idx} ({layer.name!r}) is in no slot")

        for g, group in enumerate(self.shortcut_groups):
            slots_used = {seen.get(idx) for idx in group}
            if len(group) < 2:
                raise TemplateError(f"shortcut group {g} needs at least two members")
            if len(slots_used) != 1 or None in slots_used:
                raise TemplateError(f"shortcut group {g} members must share one slot")

        self._validate_graph(seen)

    def _validate_graph(self, slot_of: dict[int, int]) -> None:
        in_c, in_h, in_w = self.input_shape
        for idx, layer in enumerate(self.layers):
            if not -1 <= layer.in_source < idx:
                raise TemplateError(
                    f"layer {idx} ({layer.name!r}): in_source must point backwards"
                )
            if layer.in_source == -1:
                src_spatial, src_width = (in_h, in_w), in_c
            else:
                src = self.layers[layer.in_source]
                src_spatial, src_width = src.feed_spatial, src.base_width
            if layer.kind == "dense":
                if layer.spatial_out != (1, 1):
                    raise TemplateError(f"layer {idx}: dense spatial_out must be (1, 1)")
                continue
            expect = (-(-src_spatial[0] // layer.stride), -(-src_spatial[1] // layer.stride))
            if tuple(layer.spatial_out) != expect:
                raise TemplateError(
                    f"layer {idx} ({layer.name!r}): spatial_out {layer.spatial_out} "
                    f"inconsistent with stride chain (expected {expect})"
                )
            if layer.kind == "depthwise":
                if layer.base_width != src_width:
                    raise TemplateError(
                        f"layer {idx} ({layer.name!r}): depthwise base_width must equal "
                        f"its producer's ({src_width})"
                    )
                if layer.prunable and slot_of.get(idx) != slot_of.get(layer.in_source):
                    raise TemplateError(
                        f"layer {idx} ({layer.name!r}): depthwise layers must share "
                        "their producer's slot"
                    )

    @cached_property
    def slot_of(self) -> dict[int, int]:
        return {idx: k for k, members in enumerate(self.slots) for idx in members}

    @property
    def nev_length(self) -> int:
        return len(self.slots)


def validate_nev(template: ArchTemplate, nev: Sequence[int]) -> tuple[int, ...]:
    """Check a NEV against the template; returns it as a tuple."""
    nev = tuple(int(v) for v in nev)
    if len(nev) != template.nev_length:
        raise TemplateError(
            f"NEV length {len(nev)} does not match template "
            f"{template.name!r} (expects {template.nev_length})"
        )
    for i, v in enumerate(nev):
        if not 0 <= v < GRID_SIZE:
            raise TemplateError(f"NEV slot {i} index {v} outside [0, {GRID_SIZE - 1}]")
    return nev


def full_nev(template: ArchTemplate) -> tuple[int, ...]:
    """The identity NEV: every slot at scale 1.0."""
    return (GRID_SIZE - 1,) * template.nev_length


def channels_of(template: ArchTemplate, nev: Sequence[int], layer: int) -> int:
    """Output channel count of one layer under a NEV.

    Prunable layers round half-up to the nearest integer and never drop
    below one channel, so every layer survives even at scale 0.10.
    """
    if not 0 <= layer < len(template.layers):
        raise TemplateError(f"layer index {layer} out of range")
    nev = validate_nev(template, nev)
    spec = template.layers[layer]
    if not spec.prunable:
        return spec.base_width
    level = template.grid.level(nev[template.slot_of[layer]])
    return max(1, _round_half_up(spec.base_width * level))


def _in_channels(template: ArchTemplate, nev: Sequence[int], layer: int) -> int:
    src = template.layers[layer].in_source
    if src == -1:
        return template.input_shape[0]
    return channels_of(template, nev, src)


def _layer_flops(template: ArchTemplate, nev: Sequence[int], idx: int) -> int:
    layer = template.layers[idx]
    c_out = channels_of(template, nev, idx)
    c_in = _in_channels(template, nev, idx)
    kh, kw = layer.kernel
    h, w = layer.spatial_out
    if layer.kind == "dense":
        macs = c_in * c_out
        positions = 1
    elif layer.kind == "depthwise":
        macs = kh * kw * c_out * h * w
        positions = h * w
    else:  # conv, pointwise
        macs = kh * kw * c_in * c_out * h * w
        positions = h * w
    # Per-channel affine normalization costs one scale and one shift per
    # output element. The published baselines this model is calibrated
    # against include that term; plain activations and pooling stay free.
    if layer.norm:
        macs += 2 * c_out * positions
    return macs


def flops_of(template: ArchTemplate, nev: Sequence[int]) -> int:
    """Analytic forward-pass cost of a NEV, in multiply-accumulate units."""
    nev = validate_nev(template, nev)
    return sum(_layer_flops(template, nev, i) for i in range(len(template.layers)))


def params_of(template: ArchTemplate, nev: Sequence[int]) -> int:
    """Weight-tensor element count of a NEV (kernels, biases, affine pairs)."""
    nev = validate_nev(template, nev)
    total = 0
    for idx, layer in enumerate(template.layers):
        c_out = channels_of(template, nev, idx)
        c_in = _in_channels(template, nev, idx)
        kh, kw = layer.kernel
        if layer.kind == "dense":
            total += c_in * c_out
        elif layer.kind == "depthwise":
            total += kh * kw * c_out
        else:
            total += kh * kw * c_in * c_out
        if layer.bias:
            total += c_out
        if layer.norm:
            total += 2 * c_out
    return total


def baseline_flops(template: ArchTemplate) -> int:
    return flops_of(template, full_nev(template))


def baseline_params(template: ArchTemplate) -> int:
    return params_of(template, full_nev(template))


def random_nev(
    template: ArchTemplate,
    rng: np.random.Generator,
    slot_range: tuple[int, int] = (0, GRID_SIZE - 1),
) -> tuple[int, ...]:
    """Draw each slot index uniformly and independently from ``slot_range``.

    ``slot_range`` is inclusive on both ends. Narrowing it shifts the FLOPs
    distribution of the sampled models (see ``evosearch.flops_distribution``).
    """
    lo, hi = int(slot_range[0]), int(slot_range[1])
    if not (0 <= lo <= hi < GRID_SIZE):
        raise TemplateError(f"slot range [{lo}, {hi}] empty or outside the grid")
    draw = rng.integers(lo, hi + 1, size=template.nev_length)
    return tuple(int(v) for v in draw)


# ---------------------------------------------------------------------------
# Template (de)serialization


def template_from_dict(data: dict) -> ArchTemplate:
    """Build a template from the JSON schema; rejects unknown kinds/fields."""
    if not isinstance(data, dict):
        raise TemplateError("template document must be a JSON object")
    schema = data.get("schema")
    if schema != TEMPLATE_SCHEMA:
        raise TemplateError(f"unsupported template schema {schema!r}")
    required = {"schema", "name", "input_shape", "layers", "slots"}
    missing = required - data.keys()
    if missing:
        raise TemplateError(f"template missing fields: {sorted(missing)}")

    layers = []
    for i, entry in enumerate(data["layers"]):
        if not isinstance(entry, dict):
            raise TemplateError(f"layer {i} must be an object")
        known = {
            "name", "kind", "base_width", "in", "kernel", "stride",
            "spatial_out", "pool", "prunable", "norm", "act", "bias",
        }
        unknown = entry.keys() - known
        if unknown:
            raise TemplateError(f"layer {i}: unknown fields {sorted(unknown)}")
        try:
            layers.append(
                LayerSpec(
                    name=str(entry["name"]),
                    kind=str(entry["kind"]),
                    base_width=int(entry["base_width"]),
                    in_source=int(entry["in"]),
                    spatial_out=tuple(int(v) for v in entry["spatial_out"]),
                    kernel=tuple(int(v) for v in entry.get("kernel", (1, 1))),
                    stride=int(entry.get("stride", 1)),
                    pool=int(entry.get("pool", 1)),
                    prunable=bool(entry.get("prunable", True)),
                    norm=bool(entry.get("norm", True)),
                    act=str(entry.get("act", "relu")),
                    bias=bool(entry.get("bias", False)),
                )
            )
        except KeyError as exc:
            raise TemplateError(f"layer {i}: missing field {exc.args[0]!r}") from exc

    slot_layers = []
    slot_names = []
    for k, slot in enumerate(data["slots"]):
        if isinstance(slot, dict):
            slot_names.append(str(slot.get("name", f"slot{k}")))
            slot_layers.append(tuple(int(v) for v in slot["layers"]))
        else:
            slot_names.append(f"slot{k}")
            slot_layers.append(tuple(int(v) for v in slot))

    grid = ScaleGrid(tuple(data["grid"])) if "grid" in data else ScaleGrid.default()

    return ArchTemplate(
        name=str(data["name"]),
        input_shape=tuple(int(v) for v in data["input_shape"]),
        layers=tuple(layers),
        slots=tuple(slot_layers),
        slot_names=tuple(slot_names),
        shortcut_groups=tuple(
            tuple(int(v) for v in g) for g in data.get("shortcut_groups", ())
        ),
        grid=grid,
    )


def template_to_dict(template: ArchTemplate) -> dict:
    layers = []
    for layer in template.layers:
        entry = {
            "name": layer.name,
            "kind": layer.kind,
            "base_width": layer.base_width,
            "in": layer.in_source,
            "spatial_out": list(layer.spatial_out),
            "prunable": layer.prunable,
            "norm": layer.norm,
            "act": layer.act,
            "bias": layer.bias,
        }
        if layer.kind != "dense":
            entry["kernel"] = list(layer.kernel)
            entry["stride"] = layer.stride
        if layer.pool != 1:
            entry["pool"] = layer.pool
        layers.append(entry)
    names = template.slot_names or tuple(f"slot{k}" for k in range(len(template.slots)))
    return {
        "schema": TEMPLATE_SCHEMA,
        "name": template.name,
        "input_shape": list(template.input_shape),
        "layers": layers,
        "slots": [
            {"name": names[k], "layers": list(members)}
            for k, members in enumerate(template.slots)
        ],
        "shortcut_groups": [list(g) for g in template.shortcut_groups],
    }


def load_template(path: str | Path) -> ArchTemplate:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise TemplateError(f"template file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise TemplateError(f"template file {path} is not valid JSON: {exc}") from exc
    return template_from_dict(data)


def builtin_template(name: str) -> ArchTemplate:
    """Load one of the shipped templates: resnet50, mobilenet_v1, mobilenet_v2, mininet."""
    if name not in _BUILTIN_NAMES:
        raise TemplateError(f"no builtin template {name!r}; choose from {_BUILTIN_NAMES}")
    text = resources.files("metaprune.templates").joinpath(f"{name}.json").read_text()
    return template_from_dict(json.loads(text))


def resolve_template(ref: str | Path) -> ArchTemplate:
    """Accept either a builtin template name or a path to a JSON file."""
    if isinstance(ref, str) and ref in _BUILTIN_NAMES:
        return builtin_template(ref)
    return load_template(ref)
