"""Backend selection for the hot gather kernel.

The compiled Cython module is used when it imports; otherwise, or when
``STEGATTN_PURE_PYTHON`` is set to a non-empty value, the numpy fallback is
used. Both produce bit-identical results.
"""

import os

import numpy as np

from ..errors import ShapeError, UsageError
from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

if _ckernels is not None and not os.environ.get("STEGATTN_PURE_PYTHON"):
    _impl = _ckernels
else:
    _impl = _pykernels

BACKEND: str = _impl.NAME


def available_backends() -> dict:
    found = {"numpy": _pykernels}
    if _ckernels is not None:
        found["cython"] = _ckernels
    return found


def im2row(src: np.ndarray, entries: np.ndarray, out_h: int, out_w: int,
           out: np.ndarray | None = None, backend=None) -> np.ndarray:
    """Gather shifted channel runs of a padded (H, W, C) image into rows.

    ``entries`` is an (E, 4) integer array of ``(oy, ox, c0, c1)``. The
    result has shape ``(out_h * out_w, sum(c1 - c0))``. ``backend`` is a
    name from :func:`available_backends` or None for the active one.
    """
    if backend is None:
        impl = _impl
    else:
        found = available_backends()
        if backend not in found:
            raise UsageError(f"unknown kernel backend {backend!r}; available: {', '.join(found)}")
        impl = found[backend]
    entries = np.ascontiguousarray(entries, dtype=np.int64)
    src = np.ascontiguousarray(src)
    hp, wp, c = src.shape
    if entries.size:
        if (entries[:, 0].min() < 0 or entries[:, 1].min() < 0
                or entries[:, 0].max() + out_h > hp
                or entries[:, 1].max() + out_w > wp
                or entries[:, 2].min() < 0 or entries[:, 3].max() > c
                or (entries[:, 3] < entries[:, 2]).any()):
            raise ShapeError("im2row entry reaches outside the source image")
    width = int((entries[:, 3] - entries[:, 2]).sum()) if entries.size else 0
    if out is None:
        out = np.empty((out_h * out_w, width), dtype=src.dtype)
    elif out.shape != (out_h * out_w, width) or out.dtype != src.dtype:
        raise ShapeError(f"im2row buffer has shape {out.shape}, need {(out_h * out_w, width)}")
    return impl.im2row(src, entries, out_h, out_w, out)
