"""Pure-numpy fallback for the compiled gather kernels."""

import numpy as np

NAME = "numpy"


def im2row(src: np.ndarray, entries: np.ndarray, out_h: int, out_w: int,
           out: np.ndarray) -> np.ndarray:
    view = out.reshape(out_h, out_w, out.shape[1])
    col = 0
    for oy, ox, c0, c1 in entries.tolist():
        width = c1 - c0
        view[:, :, col:col + width] = src[oy:oy + out_h, ox:ox + out_w, c0:c1]
        col += width
    return out
