"""Binary checkpoint format.

Layout, all integers little-endian::

    b"STGA"                      magic
    u32  format_version          currently 1
    u32  config length, bytes    TrainConfig as UTF-8 JSON (sorted keys)
    u32  entry count
    per entry:
        u32 name length, bytes   UTF-8 parameter name
        u32 ndim, ndim x u32     extents
    u64  payload length          must equal 4 * sum of extent products
    payload                      float32 values, entries concatenated
    u32  CRC32 of payload
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from ..errors import (
    CheckpointCorruptError,
    CheckpointLengthError,
    CheckpointShapeError,
    CheckpointVersionError,
    ShapeError,
)
from ..model import StegoModelParams, build_params, parameter_shapes
from .train import TrainConfig

MAGIC = b"STGA"
FORMAT_VERSION = 1


def encode(params: StegoModelParams, config: TrainConfig) -> bytes:
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    cfg = json.dumps(config.to_dict(), sort_keys=True).encode("utf-8")
    parts += [struct.pack("<I", len(cfg)), cfg]
    named = list(params.named_tensors())
    parts.append(struct.pack("<I", len(named)))
    payload = []
    for name, t in named:
        raw = name.encode("utf-8")
        parts += [struct.pack("<I", len(raw)), raw, struct.pack("<I", t.data.ndim)]
        parts.append(struct.pack(f"<{t.data.ndim}I", *t.data.shape))
        payload.append(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
    body = b"".join(payload)
    parts += [struct.pack("<Q", len(body)), body, struct.pack("<I", zlib.crc32(body))]
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointLengthError(f"checkpoint truncated while reading {what}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def decode(buf: bytes) -> tuple[dict[str, np.ndarray], dict]:
    """Parse checkpoint bytes into (name -> float32 array, config dict)."""
    r = _Reader(buf)
    if r.take(4, "magic") != MAGIC:
        raise CheckpointCorruptError("not a checkpoint: bad magic bytes")
    version = r.u32("format version")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"checkpoint format {version}, this build reads {FORMAT_VERSION}")
    cfg_len = r.u32("config length")
    try:
        config = json.loads(r.take(cfg_len, "config").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointCorruptError(f"config block is not valid JSON: {exc}") from exc

    manifest = []
    for _ in range(r.u32("entry count")):
        name = r.take(r.u32("name length"), "name").decode("utf-8")
        ndim = r.u32("ndim")
        shape = struct.unpack(f"<{ndim}I", r.take(4 * ndim, "extents"))
        manifest.append((name, shape))
    declared = struct.unpack("<Q", r.take(8, "payload length"))[0]
    expected = 4 * sum(int(np.prod(s)) for _, s in manifest)
    if declared != expected:
        raise CheckpointLengthError(
            f"manifest describes {expected} payload bytes but header declares {declared}")
    remaining = len(buf) - r.pos
    if remaining != declared + 4:
        raise CheckpointLengthError(
            f"payload plus checksum should be {declared + 4} bytes, file has {remaining}")
    body = r.take(declared, "payload")
    (crc,) = struct.unpack("<I", r.take(4, "checksum"))
    if zlib.crc32(body) != crc:
        raise CheckpointCorruptError("payload checksum mismatch")

    arrays = {}
    offset = 0
    for name, shape in manifest:
        count = int(np.prod(shape))
        arrays[name] = np.frombuffer(body, dtype="<f4", count=count, offset=offset) \
            .reshape(shape).astype(np.float32)
        offset += 4 * count
    return arrays, config


def save_checkpoint(params: StegoModelParams, config: TrainConfig, path: str | Path) -> None:
    Path(path).write_bytes(encode(params, config))


def load_checkpoint(path: str | Path) -> tuple[StegoModelParams, TrainConfig]:
    arrays, cfg = decode(Path(path).read_bytes())
    config = TrainConfig.from_dict(cfg)
    for name, shape in parameter_shapes(config.reduction_ratio, config.decoder_attention):
        if name in arrays and arrays[name].shape != shape:
            raise CheckpointShapeError(
                f"checkpoint parameter {name} has shape {arrays[name].shape}, "
                f"model expects {shape}")
    try:
        params = build_params(arrays, config.mode, config.beta, config.reduction_ratio,
                              config.decoder_attention)
    except ShapeError as exc:
        raise CheckpointShapeError(str(exc)) from exc
    return params, config
