"""Train every attention wiring on the same data and tabulate held-out metrics."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from ..attention import TABLE_ORDER, AttentionMode
from ..errors import UsageError
from ..metrics import CSV_HEADER, MetricsReport, error_row, evaluate_pairs
from ..model import StegoModel, StegoModelParams, init_params
from .data import load_dataset
from .train import TrainConfig, fit

log = logging.getLogger(__name__)

EVAL_FRACTION = 5  # last 1/5 of pairs is held out


def split_indices(n_pairs: int) -> tuple[np.ndarray, np.ndarray]:
    """(train, held-out) pair indices; the held-out part is the last 20%."""
    if n_pairs < 2:
        raise UsageError(f"need at least 2 pairs to split, got {n_pairs}")
    n_eval = max(1, n_pairs // EVAL_FRACTION)
    idx = np.arange(n_pairs)
    return idx[:n_pairs - n_eval], idx[n_pairs - n_eval:]


@dataclass
class ModeResult:
    mode: AttentionMode
    report: MetricsReport | None = None
    loss_log: list[float] = field(default_factory=list)
    error: str | None = None
    seconds: float = 0.0
    params: StegoModelParams | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def csv_row(self) -> str:
        return self.report.csv_row() if self.report is not None else error_row(self.mode.label)


@dataclass
class ComparisonRun:
    results: list[ModeResult]
    seconds: float
    train_indices: np.ndarray
    eval_indices: np.ndarray

    @property
    def ok(self) -> bool:
        return all(r.ok for r in self.results)

    def reports(self) -> list[MetricsReport]:
        return [r.report for r in self.results if r.report is not None]

    def to_csv(self) -> str:
        return "\n".join([CSV_HEADER] + [r.csv_row() for r in self.results]) + "\n"


def compare(config: TrainConfig, modes: Sequence[AttentionMode] = TABLE_ORDER,
            keep_params: bool = False) -> ComparisonRun:
    """Train each mode with identical seed, data and budget; score on held-out pairs.

    A mode that raises is recorded with its error and the others still run.
    """
    if config.data_dir is None:
        raise UsageError("compare needs a data_dir")
    started = time.perf_counter()
    covers, secrets = load_dataset(config.data_dir, config.image_size, config.seed)
    train_idx, eval_idx = split_indices(len(covers))
    held_out = (covers[eval_idx], secrets[eval_idx])
    results = []
    for mode in modes:
        t0 = time.perf_counter()
        result = ModeResult(mode)
        try:
            cfg = replace(config, mode=mode)
            params = init_params(cfg.seed, mode, cfg.beta, cfg.reduction_ratio, cfg.decoder_attention)
            result.loss_log = fit(params, covers, secrets, cfg, indices=train_idx)
            result.report = evaluate_pairs(StegoModel(params), held_out, mode.label)
            if keep_params:
                result.params = params
        except Exception as exc:  # one failing wiring must not abort the table
            log.error("mode %s failed: %s", mode.value, exc)
            result.error = f"{type(exc).__name__}: {exc}"
        result.seconds = time.perf_counter() - t0
        results.append(result)
    return ComparisonRun(results, time.perf_counter() - started, train_idx, eval_idx)


@dataclass
class TrendRecord:
    seed: int
    baseline_mse_secret: float
    parallel_mse_secret: float

    @property
    def parallel_lower(self) -> bool:
        return self.parallel_mse_secret < self.baseline_mse_secret


def parallel_vs_baseline(config: TrainConfig, seeds: Sequence[int]) -> list[TrendRecord]:
    """Secret MSE of Parallel vs Baseline for each seed (a trend, not a test)."""
    records = []
    for seed in seeds:
        run = compare(replace(config, seed=seed), modes=(AttentionMode.BASELINE, AttentionMode.PARALLEL))
        base, par = (r.report for r in run.results)
        if base is None or par is None:
            raise UsageError(f"trend run for seed {seed} failed: "
                             + "; ".join(r.error for r in run.results if r.error))
        records.append(TrendRecord(seed, base.mse_secret, par.mse_secret))
    return records
