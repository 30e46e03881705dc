"""Image steganography with channel and spatial attention between conv blocks."""

from .attention import TABLE_ORDER, AttentionMode
from .errors import (
    CheckpointError,
    DataError,
    InsufficientDataError,
    NumericError,
    ShapeError,
    StegError,
    UsageError,
)
from .metrics import MetricsReport, evaluate_pairs, mse, psnr, ssim
from .model import StegoModel, StegoModelParams, init_params
from .numerics import BACKEND
from .pipeline import TrainConfig, compare, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "AttentionMode", "BACKEND", "CheckpointError", "DataError", "InsufficientDataError",
    "MetricsReport", "NumericError", "ShapeError", "StegError", "StegoModel", "StegoModelParams",
    "TABLE_ORDER", "TrainConfig", "UsageError", "compare", "evaluate_pairs", "init_params",
    "load_checkpoint", "mse", "psnr", "save_checkpoint", "ssim", "train",
]
