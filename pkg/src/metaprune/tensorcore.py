"""Minimal reverse-mode autodiff over float64 numpy arrays.

Just enough differentiable compute for the desk-scale networks in this
package: dense layers, standard and depthwise convolution, per-channel
normalization with affine parameters, ReLU, global average pooling, and
softmax cross-entropy, plus plain SGD with two learning-rate schedules and
a binary checkpoint format.

Every op is a thin graph-building wrapper around a pure numpy kernel. When
none of the inputs participates in a graph (no ``requires_grad`` anywhere),
the wrapper skips graph construction entirely, so inference over constant
tensors pays no autodiff overhead.

Default precision is float64: the test suite holds every op to tight
central-difference gradient checks, which float32 cannot satisfy. Pass
arrays through unchanged if you need float32 speed in a throwaway script,
but the package itself always runs float64.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import CheckpointError, GraphError, OptimizerError, ShapeError

Array = np.ndarray


class Tensor:
    """A node in the autodiff graph: float64 values plus an optional gradient."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "_consumed")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Array | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[Array], tuple[Array | None, ...]] | None = None
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def _in_graph(*tensors: Tensor) -> bool:
    return any(t.requires_grad or t._parents for t in tensors)


def _node(data: Array, parents: tuple[Tensor, ...], vjp) -> Tensor:
    out = Tensor(data)
    if _in_graph(*parents):
        out._parents = parents
        out._vjp = vjp
    return out


def backward(loss: Tensor) -> None:
    """Reverse-mode pass from a scalar loss; accumulates into ``.grad``.

    A graph can be consumed once; rerun the forward pass before calling
    backward again.
    """
    if loss.data.shape != ():
        raise GraphError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if loss._consumed:
        raise GraphError("backward already ran for this graph; run a new forward pass")
    if not loss._parents and not loss.requires_grad:
        raise GraphError("loss is detached: no parameters reachable from it")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, Array] = {id(loss): np.ones((), dtype=np.float64)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad = g.copy() if node.grad is None else node.grad + g
        if node._vjp is None:
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if pg is None:
                continue
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg
    loss._consumed = True


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# Forward ops


def dense(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x (N, Cin) @ w (Cin, Cout) + b (Cout,)."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
        raise ShapeError(f"dense: x {x.data.shape} incompatible with w {w.data.shape}")
    if b is not None and b.data.shape != (w.data.shape[1],):
        raise ShapeError(f"dense: bias {b.data.shape} does not match w {w.data.shape}")
    y = x.data @ w.data
    if b is not None:
        y = y + b.data

        def vjp(g: Array):
            return g @ w.data.T, x.data.T @ g, g.sum(axis=0)

        return _node(y, (x, w, b), vjp)

    def vjp(g: Array):
        return g @ w.data.T, x.data.T @ g

    return _node(y, (x, w), vjp)


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def _pad_input(x: Array, ph: int, pw: int) -> Array:
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))


def _unpad(dxp: Array, ph: int, pw: int) -> Array:
    if ph == 0 and pw == 0:
        return dxp
    h, w = dxp.shape[2] - 2 * ph, dxp.shape[3] - 2 * pw
    return dxp[:, :, ph : ph + h, pw : pw + w]


def _out_hw(xp: Array, kh: int, kw: int, sh: int, sw: int) -> tuple[int, int]:
    return (xp.shape[2] - kh) // sh + 1, (xp.shape[3] - kw) // sw + 1


def _tap(xp: Array, i: int, j: int, sh: int, sw: int, hout: int, wout: int) -> Array:
    # the (N, C, Hout, Wout) view of padded input under kernel tap (i, j)
    return xp[:, :, i : i + sh * hout : sh, j : j + sw * wout : sw]


def conv2d(x: Tensor, w: Tensor, stride=1, padding=0) -> Tensor:
    """Standard convolution: x (N, Cin, H, W), w (Cout, Cin, kh, kw).

    Evaluated one kernel tap at a time, each tap a channel matmul; keeps
    everything in BLAS without materializing im2col buffers.
    """
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv2d: need 4-d x and w, got {x.data.shape}, {w.data.shape}")
    if x.data.shape[1] != w.data.shape[1]:
        raise ShapeError(
            f"conv2d: input channels {x.data.shape[1]} != kernel channels {w.data.shape[1]}"
        )
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    kh, kw = w.data.shape[2], w.data.shape[3]
    xp = _pad_input(x.data, ph, pw)
    if xp.shape[2] < kh or xp.shape[3] < kw:
        raise ShapeError(f"conv2d: padded input {xp.shape} smaller than kernel {kh}x{kw}")
    hout, wout = _out_hw(xp, kh, kw, sh, sw)
    n, o = x.data.shape[0], w.data.shape[0]
    y = np.zeros((n, o, hout, wout))
    for i in range(kh):
        for j in range(kw):
            xs = _tap(xp, i, j, sh, sw, hout, wout)
            # (N, h, w, C) @ (C, O) -> (N, h, w, O)
            y += np.tensordot(xs, w.data[:, :, i, j], axes=([1], [1])).transpose(0, 3, 1, 2)

    def vjp(g: Array):
        dw = np.empty_like(w.data)
        dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                xs = _tap(xp, i, j, sh, sw, hout, wout)
                dw[:, :, i, j] = np.tensordot(g, xs, axes=([0, 2, 3], [0, 2, 3]))
                _tap(dxp, i, j, sh, sw, hout, wout)[...] += np.tensordot(
                    g, w.data[:, :, i, j], axes=([1], [0])
                ).transpose(0, 3, 1, 2)
        return _unpad(dxp, ph, pw), dw

    return _node(y, (x, w), vjp)


def depthwise_conv2d(x: Tensor, w: Tensor, stride=1, padding=0) -> Tensor:
    """Per-channel convolution: x (N, C, H, W), w (C, kh, kw)."""
    if x.data.ndim != 4 or w.data.ndim != 3:
        raise ShapeError(
            f"depthwise_conv2d: need 4-d x and 3-d w, got {x.data.shape}, {w.data.shape}"
        )
    if x.data.shape[1] != w.data.shape[0]:
        raise ShapeError(
            f"depthwise_conv2d: channels {x.data.shape[1]} != kernels {w.data.shape[0]}"
        )
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    kh, kw = w.data.shape[1], w.data.shape[2]
    xp = _pad_input(x.data, ph, pw)
    if xp.shape[2] < kh or xp.shape[3] < kw:
        raise ShapeError(
            f"depthwise_conv2d: padded input {xp.shape} smaller than kernel {kh}x{kw}"
        )
    hout, wout = _out_hw(xp, kh, kw, sh, sw)
    n, c = x.data.shape[0], x.data.shape[1]
    y = np.zeros((n, c, hout, wout))
    for i in range(kh):
        for j in range(kw):
            y += _tap(xp, i, j, sh, sw, hout, wout) * w.data[None, :, i, j, None, None]

    def vjp(g: Array):
        dw = np.empty_like(w.data)
        dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                xs = _tap(xp, i, j, sh, sw, hout, wout)
                dw[:, i, j] = (g * xs).sum(axis=(0, 2, 3))
                _tap(dxp, i, j, sh, sw, hout, wout)[...] += (
                    g * w.data[None, :, i, j, None, None]
                )
        return _unpad(dxp, ph, pw), dw

    return _node(y, (x, w), vjp)


def _norm_axes(x: Array) -> tuple[int, ...]:
    if x.ndim == 4:
        return (0, 2, 3)
    if x.ndim == 2:
        return (0,)
    raise ShapeError(f"channel_norm_affine: need (N,C,H,W) or (N,C), got {x.shape}")


def _expand(v: Array, ndim: int) -> Array:
    return v.reshape((1, -1) + (1,) * (ndim - 2))


def channel_norm_affine(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    mean: Array | None = None,
    var: Array | None = None,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalization with scale and shift.

    With ``mean``/``var`` omitted, statistics come from the batch itself and
    gradients flow through them (training mode). With fixed statistics the
    op is a plain per-channel affine map (evaluation mode).
    """
    axes = _norm_axes(x.data)
    c = x.data.shape[1]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeError(
            f"channel_norm_affine: gamma/beta must have shape ({c},), "
            f"got {gamma.data.shape}, {beta.data.shape}"
        )
    nd = x.data.ndim
    if mean is not None:
        mean = np.asarray(mean)
        inv_std = 1.0 / np.sqrt(np.asarray(var) + eps)
        # y = x * scale + shift, folded to two fused passes
        scale = gamma.data * inv_std
        y = x.data * _expand(scale, nd) + _expand(beta.data - mean * scale, nd)

        def vjp_fixed(g: Array):
            xhat = (x.data - _expand(mean, nd)) * _expand(inv_std, nd)
            dx = g * _expand(scale, nd)
            dgamma = (g * xhat).sum(axis=axes)
            dbeta = g.sum(axis=axes)
            return dx, dgamma, dbeta

        return _node(y, (x, gamma, beta), vjp_fixed)

    mu = x.data.mean(axis=axes)
    v = (x.data * x.data).mean(axis=axes) - mu * mu
    np.maximum(v, 0.0, out=v)  # guard fp cancellation
    inv = 1.0 / np.sqrt(v + eps)
    # y = x * a + b with a = gamma/std, b = beta - mu * a: two fused passes
    a = gamma.data * inv
    y = x.data * _expand(a, nd) + _expand(beta.data - mu * a, nd)

    def vjp_batch(g: Array):
        xhat = (x.data - _expand(mu, nd)) * _expand(inv, nd)
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        m = float(np.prod([x.data.shape[ax] for ax in axes]))
        # standard batch-statistics backward, biased variance:
        # dx = (g - mean(g) - xhat * mean(g * xhat)) * gamma / std
        dx = (
            g - _expand(dbeta / m, nd) - xhat * _expand(dgamma / m, nd)
        ) * _expand(a, nd)
        return dx, dgamma, dbeta

    return _node(y, (x, gamma, beta), vjp_batch)


def batch_channel_stats(x: Array) -> tuple[Array, Array]:
    """Per-channel mean and biased variance of a batch, matching training mode."""
    axes = _norm_axes(x)
    mu = x.mean(axis=axes)
    v = (x * x).mean(axis=axes) - mu * mu
    np.maximum(v, 0.0, out=v)
    return mu, v


def relu(x: Tensor) -> Tensor:
    y = np.maximum(x.data, 0.0)

    def vjp(g: Array):
        return (g * (x.data > 0),)

    return _node(y, (x,), vjp)


def global_avg_pool(x: Tensor) -> Tensor:
    """(N, C, H, W) -> (N, C)."""
    if x.data.ndim != 4:
        raise ShapeError(f"global_avg_pool: need (N,C,H,W), got {x.data.shape}")
    n, c, h, w = x.data.shape

    def vjp(g: Array):
        return (np.broadcast_to(g[:, :, None, None], (n, c, h, w)) / (h * w),)

    return _node(x.data.mean(axis=(2, 3)), (x,), vjp)


def softmax_cross_entropy(logits: Tensor, labels: Array) -> Tensor:
    """Mean cross-entropy of integer labels; log-sum-exp stabilized."""
    labels = np.asarray(labels)
    if logits.data.ndim != 2 or labels.shape != (logits.data.shape[0],):
        raise ShapeError(
            f"softmax_cross_entropy: logits {logits.data.shape} vs labels {labels.shape}"
        )
    n = logits.data.shape[0]
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    picked = z[np.arange(n), labels]
    loss = float((lse - picked).mean())

    def vjp(g: Array):
        p = np.exp(z - lse[:, None])
        p[np.arange(n), labels] -= 1.0
        return (p * (g / n),)

    return _node(np.asarray(loss), (logits,), vjp)


def crop(x: Tensor, sizes: Sequence[int]) -> Tensor:
    """Keep the leading ``sizes`` entries of the first len(sizes) dims.

    The slice stays connected to the graph: gradients scatter back into the
    full tensor with zeros over the cropped-away region.
    """
    if len(sizes) > x.data.ndim:
        raise ShapeError(f"crop: {len(sizes)} sizes for a {x.data.ndim}-d tensor")
    key = tuple(slice(0, int(s)) for s in sizes)
    for s, dim in zip(sizes, x.data.shape):
        if not 0 < s <= dim:
            raise ShapeError(f"crop: size {s} invalid for dim of {dim}")

    def vjp(g: Array):
        dx = np.zeros_like(x.data)
        dx[key] = g
        return (dx,)

    return _node(x.data[key].copy(), (x,), vjp)


def narrow(x: Tensor, start: int, stop: int) -> Tensor:
    """Slice [start:stop] along the first axis, graph-connected."""
    if not 0 <= start < stop <= x.data.shape[0]:
        raise ShapeError(f"narrow: [{start}:{stop}] invalid for first dim {x.data.shape[0]}")

    def vjp(g: Array):
        dx = np.zeros_like(x.data)
        dx[start:stop] = g
        return (dx,)

    return _node(x.data[start:stop].copy(), (x,), vjp)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)

    def vjp(g: Array):
        return (g.reshape(x.data.shape),)

    return _node(x.data.reshape(shape), (x,), vjp)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add: shapes differ: {a.data.shape} vs {b.data.shape}")

    def vjp(g: Array):
        return g, g

    return _node(a.data + b.data, (a, b), vjp)


def sum_squares(x: Tensor) -> Tensor:
    def vjp(g: Array):
        return (2.0 * x.data * g,)

    return _node(np.asarray((x.data * x.data).sum()), (x,), vjp)


# ---------------------------------------------------------------------------
# Optimizer


@dataclass(frozen=True)
class Schedule:
    """Learning-rate schedule.

    per-epoch-decay: lr(e) = initial * gamma^e
    milestone-decay: lr multiplies by gamma at each milestone epoch
    """

    kind: str
    initial_lr: float
    gamma: float = 0.1
    milestones: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in ("per-epoch-decay", "milestone-decay"):
            raise OptimizerError(f"unknown schedule kind {self.kind!r}")
        if self.initial_lr <= 0:
            raise OptimizerError("initial_lr must be positive")
        if not 0.0 < self.gamma < 1.0:
            raise OptimizerError("gamma must lie in (0, 1)")
        if list(self.milestones) != sorted(set(self.milestones)):
            raise OptimizerError("milestones must be strictly increasing")

    def lr(self, epoch: int) -> float:
        if self.kind == "per-epoch-decay":
            return self.initial_lr * self.gamma**epoch
        passed = sum(1 for m in self.milestones if m <= epoch)
        return self.initial_lr * self.gamma**passed


def sgd_step(
    params: Sequence[Tensor],
    schedule: Schedule,
    epoch: int,
    grads: Sequence[Array] | None = None,
) -> float:
    """Plain SGD: p <- p - lr * g. Returns the learning rate used.

    Gradients default to each parameter's ``.grad`` buffer; parameters with
    no gradient are skipped. Non-finite gradients abort the whole step.
    """
    lr = schedule.lr(epoch)
    if grads is None:
        grads = [p.grad for p in params]
    if len(grads) != len(params):
        raise OptimizerError(f"{len(grads)} gradients for {len(params)} parameters")
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            continue
        if not np.isfinite(g).all():
            raise OptimizerError(
                f"non-finite gradient for parameter {i} (shape {p.data.shape}); step aborted"
            )
    for p, g in zip(params, grads):
        if g is not None:
            p.data -= lr * g
    return lr


def uniform_init(rng: np.random.Generator, shape: Sequence[int], fan_in: int) -> Array:
    """Uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)]."""
    bound = 1.0 / np.sqrt(max(1, fan_in))
    return rng.uniform(-bound, bound, size=tuple(shape))


# ---------------------------------------------------------------------------
# Checkpoint format: flat binary, little-endian.
#   magic "MPCK" | u32 version=1 | u32 tensor count
#   per tensor: u32 name length | name utf-8 | u32 rank | u64 dims... | f64 payload
# Round-trips are bit-exact.

_MAGIC = b"MPCK"
_VERSION = 1


def save_checkpoint(path: str | Path, tensors: dict[str, Array]) -> None:
    path = Path(path)
    blob = bytearray()
    blob += _MAGIC
    blob += struct.pack("<II", _VERSION, len(tensors))
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        if not raw:
            raise CheckpointError("tensor names must be non-empty")
        arr = np.asarray(arr, dtype=np.float64)  # tobytes() handles contiguity; keep 0-d shapes
        blob += struct.pack("<I", len(raw))
        blob += raw
        blob += struct.pack("<I", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b""
        blob += arr.astype("<f8").tobytes(order="C")
    path.write_bytes(bytes(blob))


def load_checkpoint(path: str | Path) -> dict[str, Array]:
    path = Path(path)
    blob = path.read_bytes()
    view = memoryview(blob)
    off = 0

    def take(n: int) -> memoryview:
        nonlocal off
        if off + n > len(blob):
            raise CheckpointError(f"checkpoint {path} truncated at byte {off}")
        chunk = view[off : off + n]
        off += n
        return chunk

    if bytes(take(4)) != _MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    version, count = struct.unpack("<II", take(8))
    if version != _VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    out: dict[str, Array] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = bytes(take(name_len)).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}Q", take(8 * rank)) if rank else ()
        numel = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(take(8 * numel), dtype="<f8").reshape(dims)
        out[name] = data.astype(np.float64).copy()
    if off != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - off} trailing bytes")
    return out
