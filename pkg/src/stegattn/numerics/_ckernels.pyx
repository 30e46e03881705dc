# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False
"""Compiled gather kernels for the convolution path."""

from libc.string cimport memcpy

NAME = "cython"

ctypedef fused real:
    float
    double


def im2row(const real[:, :, ::1] src, const long long[:, ::1] entries,
           Py_ssize_t out_h, Py_ssize_t out_w, real[:, ::1] out):
    """Copy shifted channel runs of one padded HWC image into pixel rows.

    Row ``y * out_w + x`` of ``out`` receives, for each entry
    ``(oy, ox, c0, c1)`` in order, ``src[y + oy, x + ox, c0:c1]``.
    Bounds are checked by the caller.
    """
    cdef Py_ssize_t n_entries = entries.shape[0]
    cdef Py_ssize_t y, x, e, col, row, width
    cdef size_t item = sizeof(real)
    with nogil:
        for y in range(out_h):
            for x in range(out_w):
                row = y * out_w + x
                col = 0
                for e in range(n_entries):
                    width = entries[e, 3] - entries[e, 2]
                    memcpy(&out[row, col],
                           &src[y + entries[e, 0], x + entries[e, 1], entries[e, 2]],
                           width * item)
                    col += width
    return out
