"""Image-quality metrics: MSE, PSNR and single-scale SSIM.

Images are float arrays on [0, 1]. PSNR uses a peak of 1.0 and is averaged
per image; MSE in a report is the mean over every pixel of every image.
SSIM uses an 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03, only
windows that fit entirely inside the image, and averages the channels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .errors import ShapeError, UsageError

WINDOW = 11
SIGMA = 1.5
K1, K2 = 0.01, 0.03
DATA_RANGE = 1.0

CSV_HEADER = "model,psnr_cover,ssim_cover,psnr_secret,ssim_secret,mse_cover,mse_secret"


def _array(x) -> np.ndarray:
    return np.asarray(getattr(x, "data", x), dtype=np.float64)


def mse(a, b) -> float:
    a, b = _array(a), _array(b)
    if a.shape != b.shape:
        raise ShapeError(f"mse: shapes {a.shape} and {b.shape} differ")
    d = a - b
    return float(np.mean(d * d))


def psnr_from_mse(err: float, max_val: float = DATA_RANGE) -> float:
    if err == 0:
        return math.inf
    return 10.0 * math.log10(max_val * max_val / err)


def psnr(a, b, max_val: float = DATA_RANGE) -> float:
    """Peak signal-to-noise ratio in dB; +inf for identical inputs."""
    return psnr_from_mse(mse(a, b), max_val)


def gaussian_window(size: int = WINDOW, sigma: float = SIGMA) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(r * r) / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable valid-region filtering over the last two axes
    k = g.size
    rows = np.lib.stride_tricks.sliding_window_view(x, k, axis=-1) @ g
    return np.lib.stride_tricks.sliding_window_view(rows, k, axis=-2) @ g


def ssim(a, b) -> float:
    """Mean SSIM of one image pair of shape (1, c, h, w) or (c, h, w)."""
    a, b = _array(a), _array(b)
    if a.shape != b.shape:
        raise ShapeError(f"ssim: shapes {a.shape} and {b.shape} differ")
    if a.ndim == 4:
        if a.shape[0] != 1:
            raise UsageError(f"ssim takes a single image pair, got batch of {a.shape[0]}")
        a, b = a[0], b[0]
    if a.ndim != 3:
        raise ShapeError(f"ssim expects (c, h, w) images, got {a.shape}")
    if a.shape[1] < WINDOW or a.shape[2] < WINDOW:
        raise UsageError(f"image {a.shape[1:]} is smaller than the {WINDOW}x{WINDOW} SSIM window")

    g = gaussian_window()
    c1 = (K1 * DATA_RANGE) ** 2
    c2 = (K2 * DATA_RANGE) ** 2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a * mu_a
    var_b = _filter_valid(b * b, g) - mu_b * mu_b
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean((num / den).mean(axis=(1, 2))))


@dataclass
class MetricsReport:
    """One comparison-table row."""

    model_name: str
    psnr_cover: float
    ssim_cover: float
    psnr_secret: float
    ssim_secret: float
    mse_cover: float
    mse_secret: float

    def csv_row(self) -> str:
        return ",".join([
            self.model_name,
            _fmt(self.psnr_cover, 3), _fmt(self.ssim_cover, 3),
            _fmt(self.psnr_secret, 3), _fmt(self.ssim_secret, 3),
            _fmt(self.mse_cover, 4), _fmt(self.mse_secret, 4),
        ])


def _fmt(value: float, digits: int) -> str:
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return f"{value:.{digits}f}"


def error_row(model_name: str) -> str:
    return ",".join([model_name] + ["ERROR"] * 6)


class HidingModel(Protocol):
    def hide(self, cover: np.ndarray, secret: np.ndarray) -> np.ndarray: ...

    def reveal(self, stego: np.ndarray) -> np.ndarray: ...


def evaluate_pairs(model: HidingModel, dataset: tuple[np.ndarray, np.ndarray], model_name: str,
                   batch_size: int = 8) -> MetricsReport:
    """Hide every secret in its cover, reveal it, and score both pairs."""
    covers, secrets = dataset
    n = len(covers)
    if n == 0:
        raise UsageError("cannot evaluate an empty dataset")
    if len(secrets) != n:
        raise ShapeError(f"{n} covers but {len(secrets)} secrets")

    psnr_c, ssim_c, psnr_s, ssim_s = [], [], [], []
    sq_cover = sq_secret = 0.0
    count = 0
    for start in range(0, n, batch_size):
        cov = covers[start:start + batch_size]
        sec = secrets[start:start + batch_size]
        stego = model.hide(cov, sec)
        revealed = model.reveal(stego)
        for i in range(len(cov)):
            psnr_c.append(psnr(cov[i], stego[i]))
            psnr_s.append(psnr(sec[i], revealed[i]))
            ssim_c.append(ssim(cov[i], stego[i]))
            ssim_s.append(ssim(sec[i], revealed[i]))
        dc = np.asarray(cov, np.float64) - stego
        ds = np.asarray(sec, np.float64) - revealed
        sq_cover += float(np.sum(dc * dc))
        sq_secret += float(np.sum(ds * ds))
        count += dc.size

    return MetricsReport(
        model_name=model_name,
        psnr_cover=float(np.mean(psnr_c)),
        ssim_cover=float(np.mean(ssim_c)),
        psnr_secret=float(np.mean(psnr_s)),
        ssim_secret=float(np.mean(ssim_s)),
        mse_cover=sq_cover / count,
        mse_secret=sq_secret / count,
    )
