"""Channel and spatial attention gates and the six ways of wiring them.

Channel gate: ``sigmoid(mlp(avgpool(f)) + mlp(maxpool(f)))`` with one
two-layer MLP (ReLU in between) shared by both pooled descriptors.
Spatial gate: ``sigmoid(conv7x7([channel_avg(f), channel_max(f)]))``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from . import numerics as nx
from .errors import ShapeError, UsageError
from .numerics import ConvParams, DenseParams, Tensor

SPATIAL_KERNEL = 7
SPATIAL_PADDING = (3, 3, 3, 3)


class AttentionMode(enum.Enum):
    """Attention wiring between hiding blocks; values are the CLI tokens."""

    BASELINE = "baseline"
    CHANNEL = "channel"
    SPATIAL = "spatial"
    PARALLEL = "channel-spatial-parallel"
    CHANNEL_THEN_SPATIAL = "channel-then-spatial"
    SPATIAL_THEN_CHANNEL = "spatial-then-channel"

    @property
    def label(self) -> str:
        return _LABELS[self]

    @classmethod
    def parse(cls, token: str) -> AttentionMode:
        try:
            return cls(token)
        except ValueError:
            valid = ", ".join(m.value for m in cls)
            raise UsageError(f"unknown attention mode {token!r}; valid modes: {valid}") from None


_LABELS = {
    AttentionMode.BASELINE: "Baseline",
    AttentionMode.CHANNEL: "Channel Only",
    AttentionMode.SPATIAL: "Spatial Only",
    AttentionMode.PARALLEL: "Channel-Spatial Parallel",
    AttentionMode.CHANNEL_THEN_SPATIAL: "Channel then Spatial",
    AttentionMode.SPATIAL_THEN_CHANNEL: "Spatial then Channel",
}

# row order of the comparison table
TABLE_ORDER = (
    AttentionMode.BASELINE,
    AttentionMode.CHANNEL,
    AttentionMode.SPATIAL,
    AttentionMode.PARALLEL,
    AttentionMode.CHANNEL_THEN_SPATIAL,
    AttentionMode.SPATIAL_THEN_CHANNEL,
)


def hidden_width(channels: int, reduction: int) -> int:
    if reduction < 1:
        raise UsageError(f"reduction ratio must be positive, got {reduction}")
    return max(1, channels // reduction)


@dataclass
class ChannelAttentionParams:
    mlp1: DenseParams  # c -> hidden
    mlp2: DenseParams  # hidden -> c
    reduction: int = 8

    @property
    def channels(self) -> int:
        return self.mlp1.weight.shape[1]


@dataclass
class SpatialAttentionParams:
    conv: ConvParams  # (1, 2, 7, 7)


def channel_attention_map(f: Tensor, p: ChannelAttentionParams) -> Tensor:
    """Per-channel gate in (0, 1), shape (n, c, 1, 1)."""
    n, c = f.shape[0], f.shape[1]
    if p.mlp1.weight.shape[1] != c or p.mlp2.weight.shape[0] != c:
        raise ShapeError(f"channel attention built for {p.channels} channels, features have {c}")

    def mlp(z: Tensor) -> Tensor:
        return nx.dense(nx.relu(nx.dense(z, p.mlp1)), p.mlp2)

    avg = nx.reshape(nx.global_pool(f, "avg"), (n, c))
    mx = nx.reshape(nx.global_pool(f, "max"), (n, c))
    logits = nx.add(mlp(avg), mlp(mx))
    return nx.sigmoid(nx.reshape(logits, (n, c, 1, 1)))


def spatial_attention_map(f: Tensor, p: SpatialAttentionParams) -> Tensor:
    """Per-pixel gate in (0, 1), shape (n, 1, h, w)."""
    if p.conv.weight.shape != (1, 2, SPATIAL_KERNEL, SPATIAL_KERNEL):
        raise ShapeError(f"spatial attention conv must be (1, 2, 7, 7), got {p.conv.weight.shape}")
    pooled = nx.concat_channels([nx.channel_pool(f, "avg"), nx.channel_pool(f, "max")])
    return nx.sigmoid(nx.conv2d(pooled, p.conv, SPATIAL_PADDING))


def apply_attention(f: Tensor, mode: AttentionMode, cp: ChannelAttentionParams,
                    sp: SpatialAttentionParams) -> Tensor:
    if mode is AttentionMode.BASELINE:
        return f
    if mode is AttentionMode.CHANNEL:
        return nx.broadcast_mul(f, channel_attention_map(f, cp))
    if mode is AttentionMode.SPATIAL:
        return nx.broadcast_mul(f, spatial_attention_map(f, sp))
    if mode is AttentionMode.CHANNEL_THEN_SPATIAL:
        g = nx.broadcast_mul(f, channel_attention_map(f, cp))
        return nx.broadcast_mul(g, spatial_attention_map(g, sp))
    if mode is AttentionMode.SPATIAL_THEN_CHANNEL:
        g = nx.broadcast_mul(f, spatial_attention_map(f, sp))
        return nx.broadcast_mul(g, channel_attention_map(g, cp))
    if mode is AttentionMode.PARALLEL:
        # both gates read the original features
        mc = channel_attention_map(f, cp)
        ms = spatial_attention_map(f, sp)
        return nx.broadcast_mul(nx.broadcast_mul(f, mc), ms)
    raise ValueError(f"unhandled attention mode {mode}")
