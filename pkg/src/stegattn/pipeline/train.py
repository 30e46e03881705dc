"""Deterministic Adam training of the hiding/reveal model."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, fields
from typing import Callable, Sequence

import numpy as np

from .. import numerics as nx
from ..attention import AttentionMode
from ..errors import NumericError, UsageError
from ..metrics import WINDOW
from ..model import MIN_EXTENT, StegoModelParams, init_params, training_loss
from .data import load_dataset

log = logging.getLogger(__name__)

# SeedSequence tag for the batch-order stream (init and dataset shuffle use the bare seed)
_BATCH_STREAM = 2


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    image_size: int = 64
    batch_size: int = 8
    steps: int = 300
    learning_rate: float = 1e-3
    beta: float = 1.0
    mode: AttentionMode = AttentionMode.BASELINE
    data_dir: str | None = None
    reduction_ratio: int = 8
    decoder_attention: bool = False

    def __post_init__(self):
        if isinstance(self.mode, str):
            object.__setattr__(self, "mode", AttentionMode.parse(self.mode))
        if self.image_size < max(WINDOW, MIN_EXTENT):
            raise UsageError(f"image_size must be >= {max(WINDOW, MIN_EXTENT)}, got {self.image_size}")
        if self.batch_size < 1:
            raise UsageError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.steps < 1:
            raise UsageError(f"steps must be >= 1, got {self.steps}")
        if not self.learning_rate > 0:
            raise UsageError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.reduction_ratio < 1:
            raise UsageError(f"reduction_ratio must be >= 1, got {self.reduction_ratio}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mode"] = self.mode.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


class Adam:
    """Adam with bias correction; updates parameter arrays in place."""

    def __init__(self, tensors: Sequence[nx.Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.tensors = list(tensors)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(t.data) for t in self.tensors]
        self.v = [np.zeros_like(t.data) for t in self.tensors]
        self.t = 0

    def step(self, grads: Sequence[np.ndarray]) -> None:
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for p, g, m, v in zip(self.tensors, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * (g * g)
            update = (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)
            p.data -= update.astype(p.data.dtype, copy=False)


def epoch_batches(rng: np.random.Generator, indices: np.ndarray, batch_size: int) -> list[np.ndarray]:
    """Shuffle ``indices`` and cut full batches; a short remainder is dropped."""
    order = indices[rng.permutation(len(indices))]
    size = min(batch_size, len(indices))
    return [order[i:i + size] for i in range(0, len(order) - size + 1, size)]


def fit(params: StegoModelParams, covers: np.ndarray, secrets: np.ndarray, config: TrainConfig,
        indices: np.ndarray | None = None,
        on_batch: Callable[[int, np.ndarray], None] | None = None) -> list[float]:
    """Run ``config.steps`` Adam steps on the pairs selected by ``indices``.

    Returns the batch loss recorded before each update.
    """
    indices = np.arange(len(covers)) if indices is None else np.asarray(indices)
    if len(indices) == 0:
        raise UsageError("no training pairs")
    rng = np.random.default_rng([config.seed, _BATCH_STREAM])
    tensors = params.tensors()
    opt = Adam(tensors, lr=config.learning_rate)
    losses: list[float] = []
    batches: list[np.ndarray] = []
    started = time.perf_counter()
    for step in range(config.steps):
        if not batches:
            batches = epoch_batches(rng, indices, config.batch_size)
        idx = batches.pop(0)
        if on_batch is not None:
            on_batch(step, idx)
        loss = training_loss(params, covers[idx], secrets[idx])
        value = float(loss.data)
        if not math.isfinite(value):
            raise NumericError(f"non-finite loss {value} at step {step}")
        opt.step(nx.grad(loss, tensors))
        losses.append(value)
        if step % 25 == 0 or step == config.steps - 1:
            log.info("%s step %d/%d loss %.5f (%.1fs)", params.mode.value, step + 1,
                     config.steps, value, time.perf_counter() - started)
    return losses


def train(config: TrainConfig) -> tuple[StegoModelParams, list[float]]:
    """Load ``config.data_dir``, initialise from ``config.seed`` and train."""
    if config.data_dir is None:
        raise UsageError("train needs a data_dir")
    covers, secrets = load_dataset(config.data_dir, config.image_size, config.seed)
    params = init_params(config.seed, config.mode, config.beta, config.reduction_ratio,
                         config.decoder_attention)
    return params, fit(params, covers, secrets, config)
