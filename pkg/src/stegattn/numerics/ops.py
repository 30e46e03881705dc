"""Differentiable array operations used by the steganography model.

Every forward function validates shapes, computes with numpy in the dtype
of its inputs and records a node; the matching backward rule is registered
under the same name in :data:`.tensor.BACKWARD`.

Convolutions are stride 1 with zero padding given as
``(top, bottom, left, right)``. :func:`conv2d_multi` evaluates several
kernels that read the same input in one pass: each kernel is placed in a
shared padded frame, frame offsets are grouped by the set of kernels that
cover them, and every group becomes one GEMM over an im2row buffer. For
the nested 3/4/5 kernels of a convolution block this computes exactly the
multiply-adds of the three separate convolutions.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from ..errors import ShapeError, UsageError
from . import kernels
from .tensor import Tensor, as_tensor, backward_rule, make_node

Padding = tuple[int, int, int, int]


@dataclass
class ConvParams:
    weight: Tensor  # (out_channels, in_channels, kh, kw)
    bias: Tensor  # (out_channels,)

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def kernel_size(self) -> tuple[int, int]:
        return self.weight.shape[2], self.weight.shape[3]


@dataclass
class DenseParams:
    weight: Tensor  # (out_dim, in_dim)
    bias: Tensor  # (out_dim,)


def same_padding(k: int) -> Padding:
    """Zero padding that keeps h, w fixed for a stride-1 k x k kernel."""
    before = (k - 1) // 2
    after = k - 1 - before
    return (before, after, before, after)


def _require_4d(x: Tensor, what: str) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{what} expects a 4-axis (n, c, h, w) tensor, got shape {x.shape}")


# --------------------------------------------------------------------------
# convolution


@dataclass(frozen=True)
class _Group:
    row0: int
    row1: int
    offsets: tuple[tuple[int, int], ...]
    runs: tuple[tuple[int, ...], ...]  # kernel indices, consecutive


@dataclass(frozen=True)
class _ConvPlan:
    in_hw: tuple[int, int]
    out_hw: tuple[int, int]
    frame_pad: Padding
    frame_size: tuple[int, int]
    shifts: tuple[tuple[int, int], ...]
    ksizes: tuple[tuple[int, int], ...]
    out_ranges: tuple[tuple[int, int], ...]
    groups: tuple[_Group, ...]
    fwd_entries: np.ndarray
    bwd_entries: np.ndarray
    bwd_slots: tuple[tuple[tuple[int, int], tuple[int, ...]], ...]


@lru_cache(maxsize=256)
def _conv_plan(in_hw, cin, kshapes, paddings) -> _ConvPlan:
    h, w = in_hw
    outs = []
    for (cout, kh, kw), (t, b, l, r) in zip(kshapes, paddings):
        if min(t, b, l, r) < 0:
            raise ShapeError(f"negative padding {(t, b, l, r)}")
        if h + t + b < kh or w + l + r < kw:
            raise ShapeError(f"padded input {(h + t + b, w + l + r)} smaller than kernel {(kh, kw)}")
        outs.append((h + t + b - kh + 1, w + l + r - kw + 1))
    if len(set(outs)) != 1:
        raise ShapeError(f"kernels produce different output extents {outs}")
    out_hw = outs[0]

    top = max(p[0] for p in paddings)
    bottom = max(p[1] for p in paddings)
    left = max(p[2] for p in paddings)
    right = max(p[3] for p in paddings)
    shifts = tuple((top - p[0], left - p[2]) for p in paddings)
    ksizes = tuple((kh, kw) for _, kh, kw in kshapes)
    fh = max(s[0] + k[0] for s, k in zip(shifts, ksizes))
    fw = max(s[1] + k[1] for s, k in zip(shifts, ksizes))

    bounds = np.cumsum([0] + [k[0] for k in kshapes])
    out_ranges = tuple((int(bounds[i]), int(bounds[i + 1])) for i in range(len(kshapes)))

    coverage: dict[tuple[int, ...], list[tuple[int, int]]] = {}
    for fy in range(fh):
        for fx in range(fw):
            cover = tuple(
                k for k, ((sy, sx), (kh, kw)) in enumerate(zip(shifts, ksizes))
                if sy <= fy < sy + kh and sx <= fx < sx + kw
            )
            if cover:
                coverage.setdefault(cover, []).append((fy, fx))

    def runs_of(cover):
        runs, cur = [], [cover[0]]
        for k in cover[1:]:
            if k == cur[-1] + 1:
                cur.append(k)
            else:
                runs.append(tuple(cur))
                cur = [k]
        runs.append(tuple(cur))
        return tuple(runs)

    groups = []
    fwd_entries = []
    row = 0
    for cover in sorted(coverage, key=lambda c: (-len(c), c)):
        offsets = tuple(coverage[cover])
        for fy, fx in offsets:
            fwd_entries.append((fy, fx, 0, cin))
        groups.append(_Group(row, row + len(offsets) * cin, offsets, runs_of(cover)))
        row += len(offsets) * cin

    bwd_entries = []
    bwd_slots = []
    for g in groups:
        for fy, fx in g.offsets:
            for run in g.runs:
                c0, c1 = out_ranges[run[0]][0], out_ranges[run[-1]][1]
                bwd_entries.append((top - fy + fh - 1, left - fx + fw - 1, c0, c1))
                bwd_slots.append(((fy, fx), run))

    return _ConvPlan(
        in_hw=in_hw, out_hw=out_hw, frame_pad=(top, bottom, left, right),
        frame_size=(fh, fw), shifts=shifts, ksizes=ksizes, out_ranges=out_ranges,
        groups=tuple(groups),
        fwd_entries=np.asarray(fwd_entries, dtype=np.int64).reshape(-1, 4),
        bwd_entries=np.asarray(bwd_entries, dtype=np.int64).reshape(-1, 4),
        bwd_slots=tuple(bwd_slots),
    )


def _tap(plan: _ConvPlan, k: int, fy: int, fx: int) -> tuple[int, int]:
    sy, sx = plan.shifts[k]
    return fy - sy, fx - sx


def _pack_forward(plan: _ConvPlan, weights: Sequence[np.ndarray], g: _Group, run) -> np.ndarray:
    # (len(offsets) * cin, run channels)
    rows = []
    for fy, fx in g.offsets:
        cols = []
        for k in run:
            ky, kx = _tap(plan, k, fy, fx)
            cols.append(weights[k][:, :, ky, kx].T)
        rows.append(np.concatenate(cols, axis=1) if len(cols) > 1 else cols[0])
    return np.ascontiguousarray(np.concatenate(rows, axis=0))


def _pad_hwc(x: np.ndarray, pad: Padding) -> np.ndarray:
    n, c, h, w = x.shape
    t, b, l, r = pad
    out = np.zeros((n, h + t + b, w + l + r, c), dtype=x.dtype)
    out[:, t:t + h, l:l + w, :] = x.transpose(0, 2, 3, 1)
    return out


def conv2d_multi(x: Tensor, convs: Sequence[tuple[ConvParams, Padding]]) -> Tensor:
    """Apply several convolutions to ``x`` and concatenate their channels.

    All kernels must read ``x``'s channel count and produce the same output
    extents. The result equals ``concat_channels([conv2d(x, p, pad) ...])``.
    """
    x = as_tensor(x)
    _require_4d(x, "conv2d")
    n, cin, h, w = x.shape
    for p, _ in convs:
        if p.weight.ndim != 4:
            raise ShapeError(f"conv weight must be 4-axis, got {p.weight.shape}")
        if p.in_channels != cin:
            raise ShapeError(f"conv weight expects {p.in_channels} input channels, input has {cin}")
        if p.bias.shape != (p.out_channels,):
            raise ShapeError(f"conv bias shape {p.bias.shape} != ({p.out_channels},)")
    kshapes = tuple((p.out_channels, *p.kernel_size) for p, _ in convs)
    paddings = tuple(tuple(int(v) for v in pad) for _, pad in convs)
    plan = _conv_plan((h, w), cin, kshapes, paddings)

    dtype = np.result_type(x.dtype, *(p.weight.dtype for p, _ in convs))
    xd = x.data.astype(dtype, copy=False)
    weights = [p.weight.data.astype(dtype, copy=False) for p, _ in convs]
    oh, ow = plan.out_hw
    cout = plan.out_ranges[-1][1]

    packs = [(g, run, _pack_forward(plan, weights, g, run)) for g in plan.groups for run in g.runs]
    xp = _pad_hwc(xd, plan.frame_pad)
    out = np.zeros((n, oh * ow, cout), dtype=dtype)
    cols = np.empty((oh * ow, plan.fwd_entries.shape[0] * cin), dtype=dtype)
    for i in range(n):
        kernels.im2row(xp[i], plan.fwd_entries, oh, ow, cols)
        for g, run, wpack in packs:
            c0, c1 = plan.out_ranges[run[0]][0], plan.out_ranges[run[-1]][1]
            out[i, :, c0:c1] += cols[:, g.row0:g.row1] @ wpack
    bias = np.concatenate([p.bias.data.astype(dtype, copy=False) for p, _ in convs])
    result = out.transpose(0, 2, 1).reshape(n, cout, oh, ow) + bias[None, :, None, None]

    parents = [x]
    for p, _ in convs:
        parents += [p.weight, p.bias]
    return make_node(np.ascontiguousarray(result), "conv2d", parents, plan=plan)


def conv2d(x: Tensor, params: ConvParams, padding: Padding = (0, 0, 0, 0)) -> Tensor:
    """Stride-1 cross-correlation with zero padding ``(top, bottom, left, right)``."""
    return conv2d_multi(x, [(params, padding)])


@backward_rule("conv2d")
def _conv2d_backward(g: np.ndarray, node: Tensor):
    plan: _ConvPlan = node.saved["plan"]
    x = node.parents[0]
    n_k = len(plan.out_ranges)
    weights_t = [node.parents[1 + 2 * k] for k in range(n_k)]
    biases_t = [node.parents[2 + 2 * k] for k in range(n_k)]
    dtype = g.dtype
    n, cin, h, w = x.shape
    oh, ow = plan.out_hw
    cout = plan.out_ranges[-1][1]
    weights = [wt.data.astype(dtype, copy=False) for wt in weights_t]
    g_rows = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n, oh * ow, cout)

    grads: list = [None]
    dweights = [None] * n_k
    if any(wt.requires_grad for wt in weights_t):
        xp = _pad_hwc(x.data.astype(dtype, copy=False), plan.frame_pad)
        cols = np.empty((oh * ow, plan.fwd_entries.shape[0] * cin), dtype=dtype)
        acc = {}
        for i in range(n):
            kernels.im2row(xp[i], plan.fwd_entries, oh, ow, cols)
            for g_idx, grp in enumerate(plan.groups):
                for run in grp.runs:
                    c0, c1 = plan.out_ranges[run[0]][0], plan.out_ranges[run[-1]][1]
                    part = cols[:, grp.row0:grp.row1].T @ g_rows[i, :, c0:c1]
                    key = (g_idx, run)
                    if key in acc:
                        acc[key] += part
                    else:
                        acc[key] = part
        dweights = [np.zeros_like(wk) for wk in weights]
        for (g_idx, run), mat in acc.items():
            grp = plan.groups[g_idx]
            col = 0
            for k in run:
                width = plan.out_ranges[k][1] - plan.out_ranges[k][0]
                block = mat[:, col:col + width].reshape(len(grp.offsets), cin, width)
                for j, (fy, fx) in enumerate(grp.offsets):
                    ky, kx = _tap(plan, k, fy, fx)
                    dweights[k][:, :, ky, kx] = block[j].T
                col += width

    if x.requires_grad:
        fh, fw = plan.frame_size
        gp = np.zeros((n, oh + 2 * (fh - 1), ow + 2 * (fw - 1), cout), dtype=dtype)
        gp[:, fh - 1:fh - 1 + oh, fw - 1:fw - 1 + ow, :] = g_rows.reshape(n, oh, ow, cout)
        wrows = []
        for (fy, fx), run in plan.bwd_slots:
            for k in run:
                ky, kx = _tap(plan, k, fy, fx)
                wrows.append(weights[k][:, :, ky, kx])
        wd = np.ascontiguousarray(np.concatenate(wrows, axis=0))
        cols_d = np.empty((h * w, wd.shape[0]), dtype=dtype)
        dx = np.empty((n, h * w, cin), dtype=dtype)
        for i in range(n):
            kernels.im2row(gp[i], plan.bwd_entries, h, w, cols_d)
            np.matmul(cols_d, wd, out=dx[i])
        grads[0] = np.ascontiguousarray(dx.reshape(n, h, w, cin).transpose(0, 3, 1, 2))

    for k in range(n_k):
        c0, c1 = plan.out_ranges[k]
        grads.append(dweights[k] if weights_t[k].requires_grad else None)
        grads.append(g[:, c0:c1].sum(axis=(0, 2, 3)) if biases_t[k].requires_grad else None)
    return tuple(grads)


# --------------------------------------------------------------------------
# elementwise


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return make_node(np.where(mask, x.data, 0).astype(x.dtype, copy=False), "relu", [x], mask=mask)


@backward_rule("relu")
def _relu_backward(g, node):
    return (g * node.saved["mask"],)


def sigmoid(x: Tensor) -> Tensor:
    """Logistic function, clamped so results stay strictly inside (0, 1)."""
    x = as_tensor(x)
    d = x.data
    e = np.exp(-np.abs(d))
    s = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(d.dtype, copy=False)
    one = np.ones((), dtype=d.dtype)
    np.clip(s, np.finfo(d.dtype).tiny, np.nextafter(one, 0), out=s)
    return make_node(s, "sigmoid", [x], out=s)


@backward_rule("sigmoid")
def _sigmoid_backward(g, node):
    s = node.saved["out"]
    return (g * s * (1 - s),)


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    return make_node(a.data + b.data, "add", [a, b])


@backward_rule("add")
def _add_backward(g, node):
    return g, g


def scale(x: Tensor, factor: float) -> Tensor:
    x = as_tensor(x)
    factor = float(factor)
    return make_node(x.data * x.dtype.type(factor), "scale", [x], factor=factor)


@backward_rule("scale")
def _scale_backward(g, node):
    return (g * g.dtype.type(node.saved["factor"]),)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    return make_node(x.data.reshape(shape), "reshape", [x])


@backward_rule("reshape")
def _reshape_backward(g, node):
    return (g.reshape(node.parents[0].shape),)


# --------------------------------------------------------------------------
# channel bookkeeping


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat_channels needs at least one part")
    for p in parts:
        _require_4d(p, "concat_channels")
    n, _, h, w = parts[0].shape
    for p in parts[1:]:
        if (p.shape[0], p.shape[2], p.shape[3]) != (n, h, w):
            raise ShapeError(f"concat_channels: part {p.shape} does not match (n, h, w) = {(n, h, w)}")
    sizes = [p.shape[1] for p in parts]
    data = np.concatenate([p.data for p in parts], axis=1)
    return make_node(data, "concat_channels", parts, sizes=sizes)


@backward_rule("concat_channels")
def _concat_backward(g, node):
    bounds = np.cumsum([0] + node.saved["sizes"])
    return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(bounds) - 1))


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    x = as_tensor(x)
    _require_4d(x, "slice_channels")
    if not 0 <= start < stop <= x.shape[1]:
        raise ShapeError(f"channel slice [{start}, {stop}) outside 0..{x.shape[1]}")
    return make_node(x.data[:, start:stop].copy(), "slice_channels", [x], start=start, stop=stop)


@backward_rule("slice_channels")
def _slice_backward(g, node):
    out = np.zeros(node.parents[0].shape, dtype=g.dtype)
    out[:, node.saved["start"]:node.saved["stop"]] = g
    return (out,)


# --------------------------------------------------------------------------
# pooling


def _check_kind(kind: str) -> None:
    if kind not in ("avg", "max"):
        raise UsageError(f"pool kind must be 'avg' or 'max', got {kind!r}")


def global_pool(x: Tensor, kind: str) -> Tensor:
    """Per (n, c) mean or maximum over the spatial window -> (n, c, 1, 1)."""
    x = as_tensor(x)
    _require_4d(x, "global_pool")
    _check_kind(kind)
    n, c, h, w = x.shape
    flat = x.data.reshape(n, c, h * w)
    if kind == "avg":
        return make_node(flat.mean(axis=2).reshape(n, c, 1, 1), "global_pool", [x], kind=kind)
    idx = flat.argmax(axis=2)
    out = np.take_along_axis(flat, idx[:, :, None], axis=2).reshape(n, c, 1, 1)
    return make_node(out, "global_pool", [x], kind=kind, idx=idx)


@backward_rule("global_pool")
def _global_pool_backward(g, node):
    n, c, h, w = node.parents[0].shape
    if node.saved["kind"] == "avg":
        return (np.broadcast_to(g / (h * w), (n, c, h, w)).astype(g.dtype),)
    dx = np.zeros((n, c, h * w), dtype=g.dtype)
    np.put_along_axis(dx, node.saved["idx"][:, :, None], g.reshape(n, c, 1), axis=2)
    return (dx.reshape(n, c, h, w),)


def channel_pool(x: Tensor, kind: str) -> Tensor:
    """Per (n, h, w) mean or maximum across channels -> (n, 1, h, w)."""
    x = as_tensor(x)
    _require_4d(x, "channel_pool")
    _check_kind(kind)
    if kind == "avg":
        return make_node(x.data.mean(axis=1, keepdims=True), "channel_pool", [x], kind=kind)
    idx = x.data.argmax(axis=1)[:, None]
    out = np.take_along_axis(x.data, idx, axis=1)
    return make_node(out, "channel_pool", [x], kind=kind, idx=idx)


@backward_rule("channel_pool")
def _channel_pool_backward(g, node):
    shape = node.parents[0].shape
    if node.saved["kind"] == "avg":
        return (np.broadcast_to(g / shape[1], shape).astype(g.dtype),)
    dx = np.zeros(shape, dtype=g.dtype)
    np.put_along_axis(dx, node.saved["idx"], g, axis=1)
    return (dx,)


# --------------------------------------------------------------------------
# reweighting, dense, loss


def broadcast_mul(x: Tensor, gate: Tensor) -> Tensor:
    """Multiply by a (n, c, 1, 1) or (n, 1, h, w) map replicated over its singleton axes."""
    x, gate = as_tensor(x), as_tensor(gate)
    _require_4d(x, "broadcast_mul")
    n, c, h, w = x.shape
    if gate.shape == (n, c, 1, 1):
        axes = (2, 3)
    elif gate.shape == (n, 1, h, w):
        axes = (1,)
    else:
        raise ShapeError(f"map shape {gate.shape} is neither {(n, c, 1, 1)} nor {(n, 1, h, w)}")
    return make_node(x.data * gate.data, "broadcast_mul", [x, gate], axes=axes)


@backward_rule("broadcast_mul")
def _broadcast_mul_backward(g, node):
    x, gate = node.parents
    dx = g * gate.data if x.requires_grad else None
    dgate = (g * x.data).sum(axis=node.saved["axes"], keepdims=True) if gate.requires_grad else None
    return dx, dgate


def dense(x: Tensor, params: DenseParams) -> Tensor:
    """Affine map of each row: ``x @ W.T + b`` for x of shape (n, in_dim)."""
    x = as_tensor(x)
    wt, bt = params.weight, params.bias
    if x.ndim != 2:
        raise ShapeError(f"dense expects an (n, in_dim) matrix, got {x.shape}")
    if wt.ndim != 2 or x.shape[1] != wt.shape[1]:
        raise ShapeError(f"dense: input width {x.shape[1]} does not match weight {wt.shape}")
    if bt.shape != (wt.shape[0],):
        raise ShapeError(f"dense bias shape {bt.shape} != ({wt.shape[0]},)")
    return make_node(x.data @ wt.data.T + bt.data, "dense", [x, wt, bt])


@backward_rule("dense")
def _dense_backward(g, node):
    x, wt, bt = node.parents
    return (
        g @ wt.data if x.requires_grad else None,
        g.T @ x.data if wt.requires_grad else None,
        g.sum(axis=0) if bt.requires_grad else None,
    )


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean squared difference over all elements, as a 0-axis tensor."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mse: shapes {a.shape} and {b.shape} differ")
    diff = a.data - b.data
    return make_node(np.mean(diff * diff), "mse", [a, b], diff=diff)


@backward_rule("mse")
def _mse_backward(g, node):
    diff = node.saved["diff"]
    da = diff * (g * diff.dtype.type(2.0 / diff.size))
    return da, -da
