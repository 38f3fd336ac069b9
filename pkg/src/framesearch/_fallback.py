"""Pure-numpy versions of the hot kernels.

These define the reference semantics; the compiled module in ``_ckernels``
must agree with them to floating-point rounding. Patch layout is
``(N*OH*OW, C*kh*kw)``: one row per output pixel, so a convolution is a single
matrix product ``cols @ w.T``.
"""

import numpy as np


def _out_extent(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def im2col(x, kh, kw, stride=1, pad=0):
    """Unfold (N, C, H, W) into (N*OH*OW, C*kh*kw) patch rows."""
    n, c, h, w = x.shape
    oh = _out_extent(h, kh, stride, pad)
    ow = _out_extent(w, kw, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = np.empty((n, oh, ow, c, kh, kw), dtype=x.dtype)
    for i in range(kh):
        i_end = i + stride * oh
        for j in range(kw):
            j_end = j + stride * ow
            cols[..., i, j] = xp[:, :, i:i_end:stride, j:j_end:stride].transpose(0, 2, 3, 1)
    return cols.reshape(n * oh * ow, c * kh * kw)


def col2im(cols, x_shape, kh, kw, stride=1, pad=0):
    """Adjoint of :func:`im2col`: scatter-add patch rows back onto an NCHW image."""
    n, c, h, w = x_shape
    oh = _out_extent(h, kh, stride, pad)
    ow = _out_extent(w, kw, stride, pad)
    cols = cols.reshape(n, oh, ow, c, kh, kw)
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(kh):
        i_end = i + stride * oh
        for j in range(kw):
            j_end = j + stride * ow
            xp[:, :, i:i_end:stride, j:j_end:stride] += cols[..., i, j].transpose(0, 3, 1, 2)
    if pad:
        return np.ascontiguousarray(xp[:, :, pad:pad + h, pad:pad + w])
    return xp


def sq_l2_rows(query, rows):
    """Squared Euclidean distance from ``query`` to every row, float64 accumulation."""
    diff = rows.astype(np.float64) - query.astype(np.float64)
    return np.einsum("ij,ij->i", diff, diff)
