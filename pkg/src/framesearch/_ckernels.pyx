# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled im2col / col2im / row-distance kernels.

Same contracts and column layout as ``framesearch._fallback``.
"""

import numpy as np
cimport numpy as cnp
from libc.string cimport memset

cnp.import_array()

ctypedef fused real:
    float
    double


cdef inline Py_ssize_t _out_extent(Py_ssize_t size, Py_ssize_t k,
                                   Py_ssize_t stride, Py_ssize_t pad) noexcept nogil:
    return (size + 2 * pad - k) // stride + 1


cdef inline void _valid_range(Py_ssize_t j, Py_ssize_t stride, Py_ssize_t pad, Py_ssize_t w,
                              Py_ssize_t ow, Py_ssize_t* lo, Py_ssize_t* hi) noexcept nogil:
    # output columns xo with 0 <= xo*stride + j - pad < w
    cdef Py_ssize_t a = pad - j
    lo[0] = 0 if a <= 0 else (a + stride - 1) // stride
    hi[0] = (w - 1 + pad - j) // stride + 1 if w - 1 + pad - j >= 0 else 0
    if hi[0] > ow:
        hi[0] = ow
    if lo[0] > hi[0]:
        lo[0] = hi[0]


cdef void _im2col_impl(real* x, real* cols, Py_ssize_t n, Py_ssize_t c, Py_ssize_t h,
                       Py_ssize_t w, Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride,
                       Py_ssize_t pad) noexcept nogil:
    # one output row (ow patches, contiguous in cols) at a time, so the
    # working set stays in cache while each tap is strided across it
    cdef Py_ssize_t oh = _out_extent(h, kh, stride, pad)
    cdef Py_ssize_t ow = _out_extent(w, kw, stride, pad)
    cdef Py_ssize_t kk = c * kh * kw
    cdef Py_ssize_t ch, i, j, b, y, xo, iy, lo, hi, k
    cdef real* row
    cdef real* dst
    cdef real* src
    for b in range(n):
        for y in range(oh):
            row = cols + (b * oh + y) * ow * kk
            k = 0
            for ch in range(c):
                for i in range(kh):
                    iy = y * stride + i - pad
                    for j in range(kw):
                        dst = row + k
                        k += 1
                        if iy < 0 or iy >= h:
                            for xo in range(ow):
                                dst[xo * kk] = 0
                            continue
                        _valid_range(j, stride, pad, w, ow, &lo, &hi)
                        src = x + ((b * c + ch) * h + iy) * w + j - pad
                        for xo in range(lo):
                            dst[xo * kk] = 0
                        for xo in range(lo, hi):
                            dst[xo * kk] = src[xo * stride]
                        for xo in range(hi, ow):
                            dst[xo * kk] = 0


cdef void _col2im_impl(real* cols, real* out, Py_ssize_t n, Py_ssize_t c, Py_ssize_t h,
                       Py_ssize_t w, Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride,
                       Py_ssize_t pad) noexcept nogil:
    cdef Py_ssize_t oh = _out_extent(h, kh, stride, pad)
    cdef Py_ssize_t ow = _out_extent(w, kw, stride, pad)
    cdef Py_ssize_t kk = c * kh * kw
    cdef Py_ssize_t ch, i, j, b, y, xo, iy, lo, hi, k
    cdef real* row
    cdef real* src
    cdef real* dst
    for b in range(n):
        for y in range(oh):
            row = cols + (b * oh + y) * ow * kk
            k = 0
            for ch in range(c):
                for i in range(kh):
                    iy = y * stride + i - pad
                    if iy < 0 or iy >= h:
                        k += kw
                        continue
                    for j in range(kw):
                        src = row + k
                        k += 1
                        _valid_range(j, stride, pad, w, ow, &lo, &hi)
                        dst = out + ((b * c + ch) * h + iy) * w + j - pad
                        for xo in range(lo, hi):
                            dst[xo * stride] += src[xo * kk]


def im2col(x, Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride=1, Py_ssize_t pad=0):
    x = np.ascontiguousarray(x)
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t ow = (w + 2 * pad - kw) // stride + 1
    cols = np.empty((n * oh * ow, c * kh * kw), dtype=x.dtype)
    cdef float[:, :, :, ::1] xf
    cdef float[:, ::1] cf
    cdef double[:, :, :, ::1] xd
    cdef double[:, ::1] cd
    if x.size == 0 or cols.size == 0:
        cols[...] = 0
        return cols
    if x.dtype == np.float32:
        xf = x
        cf = cols
        with nogil:
            _im2col_impl[float](&xf[0, 0, 0, 0], &cf[0, 0], n, c, h, w, kh, kw, stride, pad)
    elif x.dtype == np.float64:
        xd = x
        cd = cols
        with nogil:
            _im2col_impl[double](&xd[0, 0, 0, 0], &cd[0, 0], n, c, h, w, kh, kw, stride, pad)
    else:
        raise TypeError(f"unsupported dtype {x.dtype}")
    return cols


def col2im(cols, x_shape, Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride=1, Py_ssize_t pad=0):
    cols = np.ascontiguousarray(cols)
    cdef Py_ssize_t n = x_shape[0], c = x_shape[1], h = x_shape[2], w = x_shape[3]
    out = np.zeros(x_shape, dtype=cols.dtype)
    cdef float[:, ::1] cf
    cdef float[:, :, :, ::1] of
    cdef double[:, ::1] cd
    cdef double[:, :, :, ::1] od
    if out.size == 0 or cols.size == 0:
        return out
    cols = cols.reshape(-1, c * kh * kw)
    if cols.dtype == np.float32:
        cf = cols
        of = out
        with nogil:
            _col2im_impl[float](&cf[0, 0], &of[0, 0, 0, 0], n, c, h, w, kh, kw, stride, pad)
    elif cols.dtype == np.float64:
        cd = cols
        od = out
        with nogil:
            _col2im_impl[double](&cd[0, 0], &od[0, 0, 0, 0], n, c, h, w, kh, kw, stride, pad)
    else:
        raise TypeError(f"unsupported dtype {cols.dtype}")
    return out


def _sq_l2_rows(const real[::1] q, const real[:, ::1] rows, double[::1] out):
    cdef Py_ssize_t n = rows.shape[0], d = rows.shape[1], r, k
    cdef double acc, diff
    with nogil:
        for r in range(n):
            acc = 0.0
            for k in range(d):
                diff = <double>rows[r, k] - <double>q[k]
                acc = acc + diff * diff
            out[r] = acc


def sq_l2_rows(query, rows):
    rows = np.ascontiguousarray(rows)
    if rows.dtype not in (np.float32, np.float64):
        rows = rows.astype(np.float32)
    query = np.ascontiguousarray(query, dtype=rows.dtype)
    out = np.empty(rows.shape[0], dtype=np.float64)
    if rows.shape[0]:
        _sq_l2_rows(query, rows, out)
    return out
