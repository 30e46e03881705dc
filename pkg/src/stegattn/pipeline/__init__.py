"""Data ingestion, training, checkpoints and the six-way comparison."""

from .checkpoint import load_checkpoint, save_checkpoint
from .compare import ComparisonRun, ModeResult, TrendRecord, compare, parallel_vs_baseline, split_indices
from .data import load_dataset, load_image, make_toy_dataset, quantize, save_image
from .train import Adam, TrainConfig, fit, train

__all__ = [
    "Adam", "ComparisonRun", "ModeResult", "TrainConfig", "TrendRecord", "compare", "fit",
    "load_checkpoint", "load_dataset", "load_image", "make_toy_dataset", "parallel_vs_baseline",
    "quantize", "save_checkpoint", "save_image", "split_indices", "train",
]
