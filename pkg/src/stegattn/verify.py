"""Gradient verification suite behind ``stegattn gradcheck``.

Runs the per-op finite-difference cases, attention and convolution-block
cases, and (with ``full``) an end-to-end check of the training loss for
every attention mode on a 1 x 3 x 8 x 8 instance in float64.
"""

from __future__ import annotations

import numpy as np

from . import model as M
from .attention import (
    AttentionMode,
    ChannelAttentionParams,
    SpatialAttentionParams,
    apply_attention,
    channel_attention_map,
    spatial_attention_map,
)
from .numerics import ConvParams, DenseParams, Tensor
from .numerics import gradcheck as gc

# A full model stacks 13 ReLU layers, so a 1e-3 central difference routinely
# straddles a kink. Small steps fix that but the attention MLP gradients are
# ~1e-6, where round-off of a ~0.2 loss dominates; hence a ladder.
MODEL_STEPS = (1e-6, 1e-7, 1e-5)


def _attention_inputs(rng, c=4, hw=5, hidden=2):
    f = gc._distinct(rng, (2, c, hw, hw), np.float64)
    ts = [
        gc._param(rng, (hidden, c), np.float64), gc._param(rng, (hidden,), np.float64),
        gc._param(rng, (c, hidden), np.float64), gc._param(rng, (c,), np.float64),
        gc._param(rng, (1, 2, 7, 7), np.float64, 0.2), gc._param(rng, (1,), np.float64),
    ]
    return f, ts


def _unpack(ts):
    cp = ChannelAttentionParams(DenseParams(ts[0], ts[1]), DenseParams(ts[2], ts[3]))
    sp = SpatialAttentionParams(ConvParams(ts[4], ts[5]))
    return cp, sp


ATTN_LABELS = ["features", "mlp1.w", "mlp1.b", "mlp2.w", "mlp2.b", "spatial.w", "spatial.b"]


def attention_checks(seed: int = 0) -> list[gc.CheckResult]:
    rng = np.random.default_rng(seed + 101)
    results = []
    f, ts = _attention_inputs(rng)
    results.append(gc.check(
        "channel_attention_map",
        lambda a: channel_attention_map(
            a[0], ChannelAttentionParams(DenseParams(a[1], a[2]), DenseParams(a[3], a[4]))),
        [f] + ts[:4], rng, labels=ATTN_LABELS[:5]))
    results.append(gc.check(
        "spatial_attention_map",
        lambda a: spatial_attention_map(a[0], SpatialAttentionParams(ConvParams(a[1], a[2]))),
        [f] + ts[4:], rng, labels=[ATTN_LABELS[0]] + ATTN_LABELS[5:]))
    for mode in AttentionMode:
        if mode is AttentionMode.BASELINE:
            continue
        f, ts = _attention_inputs(rng)
        results.append(gc.check(
            f"apply_attention[{mode.value}]",
            lambda a, mode=mode: apply_attention(a[0], mode, *_unpack(a[1:])),
            [f] + ts, rng, labels=ATTN_LABELS))

    x = gc._param(rng, (1, 3, 6, 6), np.float64)
    blk = []
    for k, cout in ((3, 3), (4, 2), (5, 2)):
        blk += [gc._param(rng, (cout, 3, k, k), np.float64, 0.3),
                Tensor(np.full(cout, 0.05), requires_grad=True)]

    def block(a):
        p = M.ConvBlockParams(ConvParams(a[1], a[2]), ConvParams(a[3], a[4]), ConvParams(a[5], a[6]))
        return M.conv_block_forward(a[0], p)
    results.append(gc.check("conv_block_forward", block, [x] + blk, rng,
                            labels=["input", "w3", "b3", "w4", "b4", "w5", "b5"]))
    return results


def model_checks(seed: int = 0, size: int = 8) -> list[gc.CheckResult]:
    """Directional checks of d(loss)/d(every parameter and both images), per mode."""
    rng = np.random.default_rng(seed + 202)
    cover = Tensor(rng.uniform(0, 1, (1, 3, size, size)), requires_grad=True)
    secret = Tensor(rng.uniform(0, 1, (1, 3, size, size)), requires_grad=True)
    results = []
    for mode in AttentionMode:
        params = M.init_params(seed, mode, dtype=np.float64)
        # non-zero biases so their gradients are exercised away from the init point
        for name, t in params.named_tensors():
            if name.endswith(".bias"):
                t.data = rng.uniform(-0.05, 0.05, t.shape)
        names = [n for n, _ in params.named_tensors()]
        tensors = params.tensors()

        def fn(a, params=params):
            return M.training_loss(params, a[0], a[1])

        results.append(gc.check(f"model[{mode.value}]", fn, [cover, secret] + tensors, rng,
                                labels=["cover", "secret"] + names, directional=True,
                                step=MODEL_STEPS))
    return results


def run(full: bool = False, seed: int = 0) -> list[gc.CheckResult]:
    results = gc.check_ops(seed, np.float64)
    results += attention_checks(seed)
    if full:
        results += model_checks(seed)
    return results
