"""Pure-numpy fallback for the compiled kernels in ``_ckernels.pyx``."""
import numpy as np


def _out_size(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def conv2d_direct(x, w, stride, pad, groups):
    n, _, h, wd = x.shape
    c_out, cig, k, _ = w.shape
    h_out, w_out = _out_size(h, k, stride, pad), _out_size(wd, k, stride, pad)
    cog = c_out // groups
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out = np.zeros((n, c_out, h_out, w_out), dtype=x.dtype)
    # same (ci, ky, kx) accumulation order as the compiled loop
    for g in range(groups):
        o = out[:, g * cog:(g + 1) * cog]
        for ci in range(cig):
            plane = xp[:, g * cig + ci]
            for ky in range(k):
                for kx in range(k):
                    win = plane[:, ky:ky + stride * h_out:stride, kx:kx + stride * w_out:stride]
                    o += win[:, None] * w[g * cog:(g + 1) * cog, ci, ky, kx][None, :, None, None]
    return out


def im2col(x, k, stride, pad):
    n, c, h, wd = x.shape
    h_out, w_out = _out_size(h, k, stride, pad), _out_size(wd, k, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((c, k, k, n, h_out, w_out), dtype=x.dtype)
    for ky in range(k):
        for kx in range(k):
            win = xp[:, :, ky:ky + stride * h_out:stride, kx:kx + stride * w_out:stride]
            cols[:, ky, kx] = win.transpose(1, 0, 2, 3)
    return cols.reshape(c * k * k, n * h_out * w_out)


def col2im(cols, n, c, h, wd, k, stride, pad):
    h_out, w_out = _out_size(h, k, stride, pad), _out_size(wd, k, stride, pad)
    cols = cols.reshape(c, k, k, n, h_out, w_out)
    xp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad), dtype=cols.dtype)
    for ky in range(k):
        for kx in range(k):
            xp[:, :, ky:ky + stride * h_out:stride, kx:kx + stride * w_out:stride] += (
                cols[:, ky, kx].transpose(1, 0, 2, 3)
            )
    return np.ascontiguousarray(xp[:, :, pad:pad + h, pad:pad + wd])
