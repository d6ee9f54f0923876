"""Regenerate the shipped architecture template JSON files.

Run from the repo root:  python tools/make_templates.py
The outputs land in src/metaprune/templates/ and are committed as data;
the package never imports this script.
"""

from __future__ import annotations

import json
import math
import sys
from pathlib import Path

OUT_DIR = Path(__file__).resolve().parent.parent / "src" / "metaprune" / "templates"
SCHEMA = "metaprune/template/v1"


class Builder:
    def __init__(self, name, input_shape):
        self.name = name
        self.input_shape = list(input_shape)
        self.layers = []
        self.slot_names = []
        self.slot_layers = []
        self.groups = []

    def slot(self, name):
        self.slot_names.append(name)
        self.slot_layers.append([])
        return len(self.slot_names) - 1

    def add(self, name, kind, base, src, *, k=(1, 1), stride=1, pool=1, slot=None,
            prunable=True, norm=True, act="relu", bias=False):
        if src == -1:
            in_h, in_w = self.input_shape[1], self.input_shape[2]
        else:
            prev = self.layers[src]
            in_h, in_w = prev["_feed"]
        if kind == "dense":
            spatial = [1, 1]
            feed = (1, 1)
        else:
            spatial = [math.ceil(in_h / stride), math.ceil(in_w / stride)]
            feed = (math.ceil(spatial[0] / pool), math.ceil(spatial[1] / pool))
        entry = {
            "name": name,
            "kind": kind,
            "base_width": base,
            "in": src,
            "spatial_out": spatial,
            "prunable": prunable,
            "norm": norm,
            "act": act,
            "bias": bias,
            "_feed": feed,
        }
        if kind != "dense":
            entry["kernel"] = list(k)
            entry["stride"] = stride
        if pool != 1:
            entry["pool"] = pool
        self.layers.append(entry)
        idx = len(self.layers) - 1
        if prunable:
            assert slot is not None, name
            self.slot_layers[slot].append(idx)
        return idx

    def group(self, indices):
        self.groups.append(list(indices))

    def write(self):
        for entry in self.layers:
            entry.pop("_feed")
        doc = {
            "schema": SCHEMA,
            "name": self.name,
            "input_shape": self.input_shape,
            "layers": self.layers,
            "slots": [
                {"name": n, "layers": members}
                for n, members in zip(self.slot_names, self.slot_layers)
            ],
            "shortcut_groups": self.groups,
        }
        path = OUT_DIR / f"{self.name}.json"
        path.write_text(json.dumps(doc, indent=1) + "\n")
        print(f"wrote {path} ({len(self.layers)} layers, {len(self.slot_layers)} slots)")


def resnet50():
    # Bottleneck residual network, 224x224 input, stride carried by the 3x3
    # conv of each stage's first block; stem followed by a 3x3/2 max pool.
    b = Builder("resnet50", (3, 224, 224))
    stem_slot = b.slot("stem")
    stem = b.add("conv1", "conv", 64, -1, k=(7, 7), stride=2, pool=2, slot=stem_slot)
    block_in = stem
    stages = [  # (mid width, out width, blocks, first stride)
        (64, 256, 3, 1),
        (128, 512, 4, 2),
        (256, 1024, 6, 2),
        (512, 2048, 3, 2),
    ]
    for s, (mid, out, blocks, first_stride) in enumerate(stages, start=2):
        out_slot = b.slot(f"s{s}_out")
        group = []
        for n in range(blocks):
            stride = first_stride if n == 0 else 1
            mid_slot = b.slot(f"s{s}b{n}_mid")
            p = f"s{s}b{n}"
            reduce = b.add(f"{p}_reduce", "pointwise", mid, block_in, slot=mid_slot)
            conv3 = b.add(f"{p}_conv3", "conv", mid, reduce, k=(3, 3), stride=stride,
                          slot=mid_slot)
            expand = b.add(f"{p}_expand", "pointwise", out, conv3, slot=out_slot,
                           act="none")
            group.append(expand)
            if n == 0:
                down = b.add(f"{p}_down", "pointwise", out, block_in, stride=stride,
                             slot=out_slot, act="none")
                group.append(down)
            block_in = expand
        b.group(group)
    b.add("fc", "dense", 1000, block_in, prunable=False, norm=False, act="none",
          bias=True)
    b.write()


def mobilenet_v1():
    # Depthwise-separable stack, 224x224 input. Each depthwise layer tracks
    # its producer's slot; every pointwise output width is its own slot.
    b = Builder("mobilenet_v1", (3, 224, 224))
    slot = b.slot("stem")
    prev = b.add("conv1", "conv", 32, -1, k=(3, 3), stride=2, slot=slot)
    cfg = [  # (stride, pointwise out width)
        (1, 64), (2, 128), (1, 128), (2, 256), (1, 256), (2, 512),
        (1, 512), (1, 512), (1, 512), (1, 512), (1, 512), (2, 1024), (1, 1024),
    ]
    for n, (stride, out) in enumerate(cfg, start=1):
        base = b.layers[prev]["base_width"]
        dw = b.add(f"b{n}_dw", "depthwise", base, prev, k=(3, 3), stride=stride,
                   slot=slot)
        slot = b.slot(f"b{n}_pw")
        prev = b.add(f"b{n}_pw", "pointwise", out, dw, slot=slot)
    b.add("fc", "dense", 1000, prev, prunable=False, norm=False, act="none", bias=True)
    b.write()


def mobilenet_v2():
    # Inverted residual bottlenecks with linear projections, 224x224 input.
    # Stage residuals force every projection in a stage into one slot.
    b = Builder("mobilenet_v2", (3, 224, 224))
    stem_slot = b.slot("stem")
    prev = b.add("conv1", "conv", 32, -1, k=(3, 3), stride=2, slot=stem_slot)
    prev_slot = stem_slot
    cfg = [  # (expansion t, out width c, blocks n, first stride s)
        (1, 16, 1, 1), (6, 24, 2, 2), (6, 32, 3, 2), (6, 64, 4, 2),
        (6, 96, 3, 1), (6, 160, 3, 2), (6, 320, 1, 1),
    ]
    for g, (t, c, blocks, first_stride) in enumerate(cfg, start=1):
        out_slot = b.slot(f"g{g}_out")
        group = []
        for n in range(blocks):
            stride = first_stride if n == 0 else 1
            p = f"g{g}b{n}"
            in_base = b.layers[prev]["base_width"]
            if t == 1:
                dw_src, dw_slot, dw_base = prev, prev_slot, in_base
            else:
                mid_slot = b.slot(f"{p}_mid")
                expand = b.add(f"{p}_expand", "pointwise", t * in_base, prev,
                               slot=mid_slot)
                dw_src, dw_slot, dw_base = expand, mid_slot, t * in_base
            dw = b.add(f"{p}_dw", "depthwise", dw_base, dw_src, k=(3, 3),
                       stride=stride, slot=dw_slot)
            prev = b.add(f"{p}_project", "pointwise", c, dw, slot=out_slot, act="none")
            prev_slot = out_slot
            group.append(prev)
        if len(group) > 1:
            b.group(group)
    head_slot = b.slot("head")
    prev = b.add("conv_last", "pointwise", 1280, prev, slot=head_slot)
    b.add("fc", "dense", 1000, prev, prunable=False, norm=False, act="none", bias=True)
    b.write()


def mininet():
    # Desk-scale network for end-to-end runs: strided conv stem, three
    # depthwise-separable blocks, dense head; 1x28x28 input, 10 classes.
    # Downsamples early (28 -> 14 -> 7) to keep float64 CPU runs quick.
    b = Builder("mininet", (1, 28, 28))
    s0 = b.slot("stem")
    stem = b.add("stem", "conv", 16, -1, k=(3, 3), stride=2, slot=s0)
    dw1 = b.add("b1_dw", "depthwise", 16, stem, k=(3, 3), stride=2, slot=s0)
    s1 = b.slot("b1")
    pw1 = b.add("b1_pw", "pointwise", 32, dw1, slot=s1)
    dw2 = b.add("b2_dw", "depthwise", 32, pw1, k=(3, 3), stride=1, slot=s1)
    s2 = b.slot("b2")
    pw2 = b.add("b2_pw", "pointwise", 64, dw2, slot=s2)
    dw3 = b.add("b3_dw", "depthwise", 64, pw2, k=(3, 3), stride=1, slot=s2)
    s3 = b.slot("b3")
    pw3 = b.add("b3_pw", "pointwise", 64, dw3, slot=s3)
    b.add("head", "dense", 10, pw3, prunable=False, norm=False, act="none", bias=True)
    b.write()


if __name__ == "__main__":
    OUT_DIR.mkdir(parents=True, exist_ok=True)
    resnet50()
    mobilenet_v1()
    mobilenet_v2()
    mininet()
