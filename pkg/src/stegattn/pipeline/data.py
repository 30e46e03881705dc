"""Image folder ingestion, 8-bit quantisation and a synthetic toy dataset."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from ..errors import DataError, InsufficientDataError, UsageError

log = logging.getLogger(__name__)


def _square_resize(img: Image.Image, size: int) -> Image.Image:
    w, h = img.size
    side = min(w, h)
    left, top = (w - side) // 2, (h - side) // 2
    if (w, h) != (side, side):
        img = img.crop((left, top, left + side, top + side))
    if side != size:
        img = img.resize((size, size), Image.BILINEAR)
    return img


def to_unit(img: Image.Image) -> np.ndarray:
    """8-bit RGB image -> float32 (3, h, w) array on [0, 1]."""
    return (np.asarray(img, dtype=np.float32) / 255.0).transpose(2, 0, 1).copy()


def load_image(path: str | Path, size: int | None = None) -> np.ndarray:
    """Decode an image, convert to RGB, centre-crop and resize to ``size``."""
    path = Path(path)
    try:
        with Image.open(path) as img:
            img.load()
            if img.mode != "RGB":
                log.warning("%s: converting mode %s to RGB", path.name, img.mode)
                img = img.convert("RGB")
            if size is not None:
                img = _square_resize(img, size)
            return to_unit(img)
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from exc


def quantize(x: np.ndarray) -> np.ndarray:
    """[0, 1] floats -> uint8 (h, w, 3) with round-to-nearest."""
    x = np.asarray(x)
    if x.ndim == 4:
        if x.shape[0] != 1:
            raise UsageError("quantize takes one image")
        x = x[0]
    return np.round(np.clip(x, 0.0, 1.0) * 255.0).astype(np.uint8).transpose(1, 2, 0)


def save_image(path: str | Path, x: np.ndarray) -> None:
    Image.fromarray(quantize(x), mode="RGB").save(path, format="PNG")


def load_dataset(directory: str | Path, image_size: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Pair the images of a folder into (covers, secrets).

    Files are sorted by name, decoded (undecodable ones are skipped with a
    warning), shuffled with ``seed`` and split in halves: the first half are
    covers, the second half secrets, paired by position. With an odd count
    the last shuffled image is dropped.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"dataset directory {directory} does not exist")
    images = []
    for path in sorted(p for p in directory.iterdir() if p.is_file()):
        try:
            images.append(load_image(path, image_size))
        except DataError as exc:
            log.warning("skipping %s", exc)
    if len(images) < 2:
        raise InsufficientDataError(f"{directory} holds {len(images)} usable images; need at least 2")
    order = np.random.default_rng(seed).permutation(len(images))
    half = len(images) // 2
    stack = np.stack([images[i] for i in order[:2 * half]])
    return stack[:half], stack[half:]


def make_toy_image(rng: np.random.Generator, size: int) -> np.ndarray:
    """Smooth two-colour gradient with a few flat ellipses and rectangles."""
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    angle = rng.uniform(0, 2 * np.pi)
    t = np.cos(angle) * xx + np.sin(angle) * yy
    t = (t - t.min()) / max(np.ptp(t), 1e-9)
    c0, c1 = rng.uniform(0, 1, 3), rng.uniform(0, 1, 3)
    img = c0[:, None, None] * (1 - t) + c1[:, None, None] * t
    for _ in range(rng.integers(2, 6)):
        color = rng.uniform(0, 1, 3)[:, None, None]
        cy, cx = rng.uniform(0, 1, 2)
        ry, rx = rng.uniform(0.08, 0.35, 2)
        if rng.random() < 0.5:
            mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1
        else:
            mask = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
        img = np.where(mask[None], color, img)
    img = img + rng.normal(0, 0.02, img.shape)
    return np.clip(img, 0, 1)


def make_toy_dataset(directory: str | Path, count: int = 100, size: int = 64, seed: int = 0) -> list[Path]:
    """Write ``count`` synthetic RGB PNGs named toy_000.png, toy_001.png, ..."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for i in range(count):
        path = directory / f"toy_{i:03d}.png"
        save_image(path, make_toy_image(rng, size))
        paths.append(path)
    return paths
