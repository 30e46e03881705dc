"""Minimal differentiable tensor layer: arrays, ops with backward rules, gradient checks."""

from .kernels import BACKEND
from .ops import (
    ConvParams,
    DenseParams,
    add,
    broadcast_mul,
    channel_pool,
    concat_channels,
    conv2d,
    conv2d_multi,
    dense,
    global_pool,
    mse,
    relu,
    reshape,
    same_padding,
    scale,
    sigmoid,
    slice_channels,
)
from .tensor import BACKWARD, Tensor, as_tensor, grad

__all__ = [
    "BACKEND", "BACKWARD", "ConvParams", "DenseParams", "Tensor", "add", "as_tensor",
    "broadcast_mul", "channel_pool", "concat_channels", "conv2d", "conv2d_multi", "dense",
    "global_pool", "grad", "mse", "relu", "reshape", "same_padding", "scale", "sigmoid",
    "slice_channels",
]
