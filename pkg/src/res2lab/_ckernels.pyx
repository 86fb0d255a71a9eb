# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled convolution kernels.

Each routine mirrors one in ``_pykernels`` and must agree with it; the direct
convolution accumulates in (ci, ky, kx) order so both backends are
bit-identical.
"""
import numpy as np

ctypedef fused real:
    float
    double


def conv2d_direct(const real[:, :, :, ::1] x, const real[:, :, :, ::1] w,
                  int stride, int pad, int groups):
    cdef Py_ssize_t n_batch = x.shape[0], c_in = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t c_out = w.shape[0], cig = w.shape[1], k = w.shape[2]
    cdef Py_ssize_t h_out = (h + 2 * pad - k) // stride + 1
    cdef Py_ssize_t w_out = (wd + 2 * pad - k) // stride + 1
    cdef Py_ssize_t cog = c_out // groups
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((n_batch, c_out, h_out, w_out), dtype=dtype)
    cdef real[:, :, :, ::1] o = out
    cdef Py_ssize_t n, co, oy, ox, ci, ky, kx, iy, ix, base
    cdef real acc
    with nogil:
        for n in range(n_batch):
            for co in range(c_out):
                base = (co // cog) * cig
                for oy in range(h_out):
                    for ox in range(w_out):
                        acc = 0
                        for ci in range(cig):
                            for ky in range(k):
                                iy = oy * stride - pad + ky
                                if iy < 0 or iy >= h:
                                    continue
                                for kx in range(k):
                                    ix = ox * stride - pad + kx
                                    if ix < 0 or ix >= wd:
                                        continue
                                    acc = acc + x[n, base + ci, iy, ix] * w[co, ci, ky, kx]
                        o[n, co, oy, ox] = acc
    return out


def im2col(const real[:, :, :, ::1] x, int k, int stride, int pad):
    """Unfold to a (C*k*k, N*H_out*W_out) matrix; rows ordered (c, ky, kx)."""
    cdef Py_ssize_t n_batch = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t h_out = (h + 2 * pad - k) // stride + 1
    cdef Py_ssize_t w_out = (wd + 2 * pad - k) // stride + 1
    dtype = np.float32 if real is float else np.float64
    cols = np.zeros((c * k * k, n_batch * h_out * w_out), dtype=dtype)
    cdef real[:, ::1] cv = cols
    cdef Py_ssize_t ci, ky, kx, n, oy, ox, iy, ix, row, col
    with nogil:
        for ci in range(c):
            for ky in range(k):
                for kx in range(k):
                    row = (ci * k + ky) * k + kx
                    for n in range(n_batch):
                        for oy in range(h_out):
                            iy = oy * stride - pad + ky
                            if iy < 0 or iy >= h:
                                continue
                            col = (n * h_out + oy) * w_out
                            for ox in range(w_out):
                                ix = ox * stride - pad + kx
                                if ix >= 0 and ix < wd:
                                    cv[row, col + ox] = x[n, ci, iy, ix]
    return cols


def col2im(const real[:, ::1] cols, Py_ssize_t n_batch, Py_ssize_t c, Py_ssize_t h,
           Py_ssize_t wd, int k, int stride, int pad):
    """Scatter-add the inverse of :func:`im2col`."""
    cdef Py_ssize_t h_out = (h + 2 * pad - k) // stride + 1
    cdef Py_ssize_t w_out = (wd + 2 * pad - k) // stride + 1
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((n_batch, c, h, wd), dtype=dtype)
    cdef real[:, :, :, ::1] o = out
    cdef Py_ssize_t ci, ky, kx, n, oy, ox, iy, ix, row, col
    with nogil:
        for ci in range(c):
            for ky in range(k):
                for kx in range(k):
                    row = (ci * k + ky) * k + kx
                    for n in range(n_batch):
                        for oy in range(h_out):
                            iy = oy * stride - pad + ky
                            if iy < 0 or iy >= h:
                                continue
                            col = (n * h_out + oy) * w_out
                            for ox in range(w_out):
                                ix = ox * stride - pad + kx
                                if ix >= 0 and ix < wd:
                                    o[n, ci, iy, ix] += cols[row, col + ox]
    return out
