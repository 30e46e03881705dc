"""Prep / hiding / reveal encoder-decoder with attention between hiding blocks.

Every convolution block runs 3x3, 4x4 and 5x5 kernels (50, 10 and 5 maps)
over the same input, keeps extents with zero padding, applies ReLU and
concatenates to 65 channels. The prep network (2 blocks) lifts the secret
to 65 channels; those are concatenated with the cover (68 channels) and fed
to 5 hiding blocks, with the selected attention wiring applied in each of
the 4 gaps. A 3x3 convolution plus sigmoid turns 65 channels back into an
image. The reveal network mirrors the hiding network, without attention
unless ``decoder_attention`` is set.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterator

import numpy as np

from . import numerics as nx
from .attention import (
    SPATIAL_KERNEL,
    AttentionMode,
    ChannelAttentionParams,
    SpatialAttentionParams,
    apply_attention,
    hidden_width,
)
from .errors import ShapeError
from .numerics import ConvParams, DenseParams, Tensor, same_padding

BLOCK_KERNELS = ((3, 50), (4, 10), (5, 5))  # (kernel size, feature maps)
BLOCK_CHANNELS = sum(c for _, c in BLOCK_KERNELS)
IMAGE_CHANNELS = 3
N_PREP_BLOCKS = 2
N_HIDE_BLOCKS = 5
N_REVEAL_BLOCKS = 5
OUT_KERNEL = 3
MIN_EXTENT = 8


@dataclass
class ConvBlockParams:
    conv3: ConvParams
    conv4: ConvParams
    conv5: ConvParams

    @property
    def convs(self) -> tuple[ConvParams, ConvParams, ConvParams]:
        return self.conv3, self.conv4, self.conv5


AttentionPair = tuple[ChannelAttentionParams, SpatialAttentionParams]


@dataclass
class StegoModelParams:
    prep: list[ConvBlockParams]
    hiding: list[ConvBlockParams]
    hiding_out: ConvParams
    reveal: list[ConvBlockParams]
    reveal_out: ConvParams
    hiding_attn: list[AttentionPair]
    mode: AttentionMode = AttentionMode.BASELINE
    beta: float = 1.0
    reduction: int = 8
    reveal_attn: list[AttentionPair] = field(default_factory=list)

    @property
    def decoder_attention(self) -> bool:
        return bool(self.reveal_attn)

    def named_tensors(self) -> Iterator[tuple[str, Tensor]]:
        """All learnable tensors in a fixed order (the checkpoint order)."""
        for prefix, blocks in (("prep", self.prep), ("hide", self.hiding)):
            yield from _block_tensors(prefix, blocks)
        yield "hide_out.weight", self.hiding_out.weight
        yield "hide_out.bias", self.hiding_out.bias
        yield from _block_tensors("reveal", self.reveal)
        yield "reveal_out.weight", self.reveal_out.weight
        yield "reveal_out.bias", self.reveal_out.bias
        yield from _attn_tensors("hide_attn", self.hiding_attn)
        yield from _attn_tensors("reveal_attn", self.reveal_attn)

    def tensors(self) -> list[Tensor]:
        return [t for _, t in self.named_tensors()]

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self.named_tensors()}

    def num_parameters(self) -> int:
        return sum(t.data.size for t in self.tensors())

    def astype(self, dtype) -> StegoModelParams:
        """Copy with every tensor cast to ``dtype`` (still trainable)."""
        arrays = {k: v.astype(dtype) for k, v in self.arrays().items()}
        return build_params(arrays, self.mode, self.beta, self.reduction, self.decoder_attention)

    def frozen(self) -> StegoModelParams:
        """View of the same arrays that records no graph, for inference."""
        return build_params(self.arrays(), self.mode, self.beta, self.reduction,
                            self.decoder_attention, requires_grad=False)

    def with_mode(self, mode: AttentionMode) -> StegoModelParams:
        return replace(self, mode=mode)


def _block_tensors(prefix, blocks):
    for i, blk in enumerate(blocks):
        for (k, _), conv in zip(BLOCK_KERNELS, blk.convs):
            yield f"{prefix}.{i}.conv{k}.weight", conv.weight
            yield f"{prefix}.{i}.conv{k}.bias", conv.bias


def _attn_tensors(prefix, pairs):
    for i, (cp, sp) in enumerate(pairs):
        yield f"{prefix}.{i}.channel.mlp1.weight", cp.mlp1.weight
        yield f"{prefix}.{i}.channel.mlp1.bias", cp.mlp1.bias
        yield f"{prefix}.{i}.channel.mlp2.weight", cp.mlp2.weight
        yield f"{prefix}.{i}.channel.mlp2.bias", cp.mlp2.bias
        yield f"{prefix}.{i}.spatial.weight", sp.conv.weight
        yield f"{prefix}.{i}.spatial.bias", sp.conv.bias


def parameter_shapes(reduction: int = 8, decoder_attention: bool = False) -> list[tuple[str, tuple]]:
    """Ordered (name, shape) of every parameter in the architecture."""
    shapes = []

    def blocks(prefix, cins):
        for i, cin in enumerate(cins):
            for k, cout in BLOCK_KERNELS:
                shapes.append((f"{prefix}.{i}.conv{k}.weight", (cout, cin, k, k)))
                shapes.append((f"{prefix}.{i}.conv{k}.bias", (cout,)))

    def attn(prefix, count):
        c, hid = BLOCK_CHANNELS, hidden_width(BLOCK_CHANNELS, reduction)
        for i in range(count):
            shapes.extend([
                (f"{prefix}.{i}.channel.mlp1.weight", (hid, c)),
                (f"{prefix}.{i}.channel.mlp1.bias", (hid,)),
                (f"{prefix}.{i}.channel.mlp2.weight", (c, hid)),
                (f"{prefix}.{i}.channel.mlp2.bias", (c,)),
                (f"{prefix}.{i}.spatial.weight", (1, 2, SPATIAL_KERNEL, SPATIAL_KERNEL)),
                (f"{prefix}.{i}.spatial.bias", (1,)),
            ])

    out_shape = (IMAGE_CHANNELS, BLOCK_CHANNELS, OUT_KERNEL, OUT_KERNEL)
    blocks("prep", [IMAGE_CHANNELS] + [BLOCK_CHANNELS] * (N_PREP_BLOCKS - 1))
    blocks("hide", [BLOCK_CHANNELS + IMAGE_CHANNELS] + [BLOCK_CHANNELS] * (N_HIDE_BLOCKS - 1))
    shapes += [("hide_out.weight", out_shape), ("hide_out.bias", (IMAGE_CHANNELS,))]
    blocks("reveal", [IMAGE_CHANNELS] + [BLOCK_CHANNELS] * (N_REVEAL_BLOCKS - 1))
    shapes += [("reveal_out.weight", out_shape), ("reveal_out.bias", (IMAGE_CHANNELS,))]
    attn("hide_attn", N_HIDE_BLOCKS - 1)
    if decoder_attention:
        attn("reveal_attn", N_REVEAL_BLOCKS - 1)
    return shapes


def build_params(arrays: dict[str, np.ndarray], mode: AttentionMode, beta: float = 1.0,
                 reduction: int = 8, decoder_attention: bool = False,
                 requires_grad: bool = True) -> StegoModelParams:
    """Assemble the parameter structure from a name -> array mapping."""
    expected = parameter_shapes(reduction, decoder_attention)
    missing = [name for name, _ in expected if name not in arrays]
    if missing:
        raise ShapeError(f"missing parameters: {', '.join(missing[:5])}")
    for name, shape in expected:
        if tuple(arrays[name].shape) != shape:
            raise ShapeError(f"parameter {name} has shape {tuple(arrays[name].shape)}, "
                             f"model expects {shape}")
    t = {name: Tensor(arrays[name], requires_grad=requires_grad, name=name) for name, _ in expected}

    def conv(prefix):
        return ConvParams(t[f"{prefix}.weight"], t[f"{prefix}.bias"])

    def blocks(prefix, count):
        return [ConvBlockParams(*(conv(f"{prefix}.{i}.conv{k}") for k, _ in BLOCK_KERNELS))
                for i in range(count)]

    def attn(prefix, count):
        return [
            (ChannelAttentionParams(
                DenseParams(t[f"{prefix}.{i}.channel.mlp1.weight"], t[f"{prefix}.{i}.channel.mlp1.bias"]),
                DenseParams(t[f"{prefix}.{i}.channel.mlp2.weight"], t[f"{prefix}.{i}.channel.mlp2.bias"]),
                reduction),
             SpatialAttentionParams(conv(f"{prefix}.{i}.spatial")))
            for i in range(count)
        ]

    return StegoModelParams(
        prep=blocks("prep", N_PREP_BLOCKS),
        hiding=blocks("hide", N_HIDE_BLOCKS),
        hiding_out=conv("hide_out"),
        reveal=blocks("reveal", N_REVEAL_BLOCKS),
        reveal_out=conv("reveal_out"),
        hiding_attn=attn("hide_attn", N_HIDE_BLOCKS - 1),
        mode=mode,
        beta=float(beta),
        reduction=reduction,
        reveal_attn=attn("reveal_attn", N_REVEAL_BLOCKS - 1) if decoder_attention else [],
    )


def _fan_in(shape: tuple) -> int:
    return int(np.prod(shape[1:]))


def init_params(seed: int, mode: AttentionMode = AttentionMode.BASELINE, beta: float = 1.0,
                reduction: int = 8, decoder_attention: bool = False,
                dtype=np.float32) -> StegoModelParams:
    """Uniform(+-sqrt(6 / fan_in)) weights, zero biases, drawn in checkpoint order.

    Parameters of every attention block exist in every mode, so a given
    seed yields identical convolution weights across modes.
    """
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in parameter_shapes(reduction, decoder_attention):
        if name.endswith(".bias"):
            arrays[name] = np.zeros(shape, dtype=dtype)
        else:
            bound = np.sqrt(6.0 / _fan_in(shape))
            arrays[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return build_params(arrays, mode, beta, reduction, decoder_attention)


# --------------------------------------------------------------------------
# forward


def conv_block_forward(x: Tensor, p: ConvBlockParams) -> Tensor:
    convs = [(conv, same_padding(k)) for (k, _), conv in zip(BLOCK_KERNELS, p.convs)]
    # relu(concat(...)) == concat(relu(...)); one fused conv call for all three kernels
    return nx.relu(nx.conv2d_multi(x, convs))


def _check_image(x: Tensor, what: str) -> None:
    if x.ndim != 4 or x.shape[1] != IMAGE_CHANNELS:
        raise ShapeError(f"{what} must have shape (n, 3, h, w), got {x.shape}")
    if x.shape[2] < MIN_EXTENT or x.shape[3] < MIN_EXTENT:
        raise ShapeError(f"{what} extents {x.shape[2:]} below the minimum {MIN_EXTENT}")


def prep_forward(secret: Tensor, params: StegoModelParams) -> Tensor:
    secret = nx.as_tensor(secret)
    _check_image(secret, "secret")
    x = secret
    for blk in params.prep:
        x = conv_block_forward(x, blk)
    return x


def _run_blocks(x: Tensor, blocks, attn, mode: AttentionMode) -> Tensor:
    for i, blk in enumerate(blocks):
        x = conv_block_forward(x, blk)
        if i < len(blocks) - 1 and attn:
            cp, sp = attn[i]
            x = apply_attention(x, mode, cp, sp)
    return x


def _to_image(x: Tensor, out: ConvParams) -> Tensor:
    return nx.sigmoid(nx.conv2d(x, out, same_padding(OUT_KERNEL)))


def hide_forward(cover: Tensor, prep_features: Tensor, params: StegoModelParams) -> Tensor:
    cover = nx.as_tensor(cover)
    _check_image(cover, "cover")
    x = nx.concat_channels([prep_features, cover])
    x = _run_blocks(x, params.hiding, params.hiding_attn, params.mode)
    return _to_image(x, params.hiding_out)


def reveal_forward(stego: Tensor, params: StegoModelParams) -> Tensor:
    stego = nx.as_tensor(stego)
    _check_image(stego, "stego")
    x = _run_blocks(stego, params.reveal, params.reveal_attn, params.mode)
    return _to_image(x, params.reveal_out)


def forward(params: StegoModelParams, cover, secret) -> tuple[Tensor, Tensor]:
    stego = hide_forward(cover, prep_forward(secret, params), params)
    return stego, reveal_forward(stego, params)


def loss(cover, stego: Tensor, secret, secret_rec: Tensor, beta: float) -> Tensor:
    """``mse(cover, stego) + beta * mse(secret, secret_rec)``."""
    cover_term = nx.mse(cover, stego)
    if beta == 0:
        return cover_term
    return nx.add(cover_term, nx.scale(nx.mse(secret, secret_rec), beta))


def training_loss(params: StegoModelParams, cover, secret) -> Tensor:
    stego, revealed = forward(params, cover, secret)
    return loss(cover, stego, secret, revealed, params.beta)


class StegoModel:
    """Inference wrapper over numpy arrays: ``hide`` and ``reveal``."""

    def __init__(self, params: StegoModelParams):
        self.params = params
        self._frozen = params.frozen()

    def hide(self, cover: np.ndarray, secret: np.ndarray) -> np.ndarray:
        feats = prep_forward(Tensor(secret), self._frozen)
        return hide_forward(Tensor(cover), feats, self._frozen).data

    def reveal(self, stego: np.ndarray) -> np.ndarray:
        return reveal_forward(Tensor(stego), self._frozen).data
