"""Shared helpers for the test suite: tiny templates and independent oracles."""

from __future__ import annotations

import math

import numpy as np

from metaprune.arch import ArchTemplate, LayerSpec, ScaleGrid


def chain_template(
    name: str,
    widths: list[int],
    *,
    input_shape=(3, 32, 32),
    kernel=(3, 3),
    norm: bool = False,
    share_slots: bool = False,
) -> ArchTemplate:
    """A plain chain of 3x3 convs, one slot per layer (or one shared slot)."""
    layers = []
    h, w = input_shape[1], input_shape[2]
    for i, width in enumerate(widths):
        layers.append(
            LayerSpec(
                name=f"c{i}",
                kind="conv",
                base_width=width,
                in_source=i - 1,
                spatial_out=(h, w),
                kernel=kernel,
                stride=1,
                norm=norm,
                act="relu",
            )
        )
    if share_slots:
        slots = (tuple(range(len(widths))),)
    else:
        slots = tuple((i,) for i in range(len(widths)))
    return ArchTemplate(
        name=name,
        input_shape=tuple(input_shape),
        layers=tuple(layers),
        slots=slots,
    )


def affine_fitness(template, lo: float = 0.2, hi: float = 0.7):
    """Deterministic synthetic accuracy: affine in the mean channel scale."""
    grid = template.grid

    def fitness(nev):
        mean_scale = sum(grid.levels[v] for v in nev) / len(nev)
        return lo + (hi - lo) * (mean_scale - 0.1) / 0.9

    return fitness


def brute_force_conv_macs(c_in, c_out, kh, kw, h_out, w_out) -> int:
    """Literal loop-count oracle: one MAC per (output position, tap, in-channel)."""
    macs = 0
    for _ in range(h_out):
        for _ in range(w_out):
            for _ in range(c_out):
                macs += kh * kw * c_in
    return macs


def walk_template_json(doc: dict, scales: dict[int, float]) -> tuple[int, int]:
    """Independent FLOPs/params accounting straight off a template JSON dict.

    ``scales`` maps slot position -> fractional width. Re-derives channel
    counts, MACs (+2/element on normalized layers), and parameter counts
    without touching the library, as a second route for template checks.
    """
    slot_of = {}
    for k, slot in enumerate(doc["slots"]):
        for idx in slot["layers"]:
            slot_of[idx] = k

    def width(idx):
        layer = doc["layers"][idx]
        if not layer.get("prunable", True):
            return layer["base_width"]
        return max(1, math.floor(layer["base_width"] * scales[slot_of[idx]] + 0.5))

    flops = 0
    params = 0
    for idx, layer in enumerate(doc["layers"]):
        src = layer["in"]
        c_in = doc["input_shape"][0] if src == -1 else width(src)
        c_out = width(idx)
        kind = layer["kind"]
        if kind == "dense":
            h = w = 1
            kh = kw = 1
            macs = c_in * c_out
            weights = c_in * c_out
        else:
            h, w = layer["spatial_out"]
            kh, kw = layer.get("kernel", [1, 1])
            if kind == "depthwise":
                macs = kh * kw * c_out * h * w
                weights = kh * kw * c_out
            else:
                macs = kh * kw * c_in * c_out * h * w
                weights = kh * kw * c_in * c_out
        if layer.get("norm", True):
            macs += 2 * c_out * h * w
            weights += 2 * c_out
        if layer.get("bias", False):
            weights += c_out
        flops += macs
        params += weights
    return flops, params
