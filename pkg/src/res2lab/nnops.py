"""Primitive neural operators over NCHW arrays, each with its backward rule.

Forward functions are dtype-preserving, so the float64 gradient-check path
reuses them unchanged. Backward functions take the upstream gradient plus
whatever the forward pass saved.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import EmptySpatial, NonDivisibleChannels, ShapeMismatch, ValidationError

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def conv_out_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Conv2dParams:
    weight: np.ndarray
    stride: int = 1
    padding: int = 0
    groups: int = 1

    def __post_init__(self):
        _check_conv_args(self.weight, self.stride, self.padding, self.groups)


def _check_conv_args(w, stride, padding, groups):
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ShapeMismatch(f"conv weight must be (C_out, C_in/groups, k, k), got {w.shape}")
    if w.shape[2] % 2 == 0:
        raise ValidationError(f"even kernel size {w.shape[2]} is not supported")
    if stride < 1 or padding < 0 or groups < 1:
        raise ValidationError(f"bad conv geometry stride={stride} padding={padding} groups={groups}")
    if w.shape[0] % groups:
        raise NonDivisibleChannels(f"C_out={w.shape[0]} not divisible by groups={groups}")


def _check_conv_input(x, w, stride, padding, groups):
    _check_conv_args(w, stride, padding, groups)
    if x.ndim != 4:
        raise ShapeMismatch(f"conv input must be rank 4, got {x.shape}")
    if x.shape[1] % groups:
        raise NonDivisibleChannels(f"C_in={x.shape[1]} not divisible by groups={groups}")
    if x.shape[1] // groups != w.shape[1]:
        raise ShapeMismatch(
            f"input has {x.shape[1]} channels but weight expects {w.shape[1] * groups}"
        )
    k = w.shape[2]
    if x.shape[2] + 2 * padding < k or x.shape[3] + 2 * padding < k:
        raise ShapeMismatch(f"input {x.shape[2:]} smaller than kernel {k} after padding {padding}")


def conv2d_direct(x, w, stride=1, padding=0, groups=1):
    """Reference cross-correlation: one nested loop per output element."""
    _check_conv_input(x, w, stride, padding, groups)
    x = np.ascontiguousarray(x)
    w = np.ascontiguousarray(w, dtype=x.dtype)
    return kernels.conv2d_direct(x, w, stride, padding, groups)


def conv2d_forward(x, w, stride=1, padding=0, groups=1):
    """im2col + GEMM convolution. Returns ``(y, cols)``; ``cols`` feeds the backward pass."""
    _check_conv_input(x, w, stride, padding, groups)
    n, c_in, h, wd = x.shape
    c_out, cig, k, _ = w.shape
    h_out, w_out = conv_out_size(h, k, stride, padding), conv_out_size(wd, k, stride, padding)
    x = np.ascontiguousarray(x)
    if k == 1 and stride == 1 and padding == 0:
        cols = x.transpose(1, 0, 2, 3).reshape(c_in, n * h * wd)
    elif k == 1 and padding == 0:
        sub = x[:, :, ::stride, ::stride][:, :, :h_out, :w_out]
        cols = sub.transpose(1, 0, 2, 3).reshape(c_in, n * h_out * w_out)
    else:
        cols = kernels.im2col(x, k, stride, padding)
    wmat = w.reshape(c_out, cig * k * k).astype(x.dtype, copy=False)
    if groups == 1:
        out = wmat @ cols
    else:
        cog, rows = c_out // groups, cig * k * k
        out = np.empty((c_out, cols.shape[1]), dtype=x.dtype)
        for g in range(groups):
            np.matmul(wmat[g * cog:(g + 1) * cog], cols[g * rows:(g + 1) * rows],
                      out=out[g * cog:(g + 1) * cog])
    y = np.ascontiguousarray(out.reshape(c_out, n, h_out, w_out).transpose(1, 0, 2, 3))
    return y, cols


def conv2d(x, p: Conv2dParams, method: str = "fast"):
    if method == "direct":
        return conv2d_direct(x, p.weight, p.stride, p.padding, p.groups)
    if method != "fast":
        raise ValidationError(f"unknown conv method {method!r}")
    return conv2d_forward(x, p.weight, p.stride, p.padding, p.groups)[0]


def conv2d_backward(dy, x_shape, w, cols, stride=1, padding=0, groups=1):
    n, c_in, h, wd = x_shape
    c_out, cig, k, _ = w.shape
    h_out, w_out = dy.shape[2], dy.shape[3]
    dmat = dy.transpose(1, 0, 2, 3).reshape(c_out, n * h_out * w_out)
    wmat = w.reshape(c_out, cig * k * k).astype(dy.dtype, copy=False)
    cog, rows = c_out // groups, cig * k * k
    if groups == 1:
        dw = dmat @ cols.T
        dcols = wmat.T @ dmat
    else:
        dw = np.empty_like(wmat)
        dcols = np.empty((groups * rows, dmat.shape[1]), dtype=dy.dtype)
        for g in range(groups):
            o, r = slice(g * cog, (g + 1) * cog), slice(g * rows, (g + 1) * rows)
            dw[o] = dmat[o] @ cols[r].T
            dcols[r] = wmat[o].T @ dmat[o]
    if k == 1 and padding == 0:
        sub = dcols.reshape(c_in, n, h_out, w_out).transpose(1, 0, 2, 3)
        if stride == 1:
            dx = np.ascontiguousarray(sub)
        else:
            dx = np.zeros((n, c_in, h, wd), dtype=dy.dtype)
            dx[:, :, ::stride, ::stride][:, :, :h_out, :w_out] = sub
    else:
        dx = kernels.col2im(np.ascontiguousarray(dcols), n, c_in, h, wd, k, stride, padding)
    return dx, dw.reshape(w.shape)


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------

@dataclass
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = BN_EPS
    momentum: float = BN_MOMENTUM

    @classmethod
    def identity(cls, channels: int, dtype=np.float32) -> "BatchNormParams":
        return cls(np.ones(channels, dtype), np.zeros(channels, dtype),
                   np.zeros(channels, dtype), np.ones(channels, dtype))

    def __post_init__(self):
        c = len(self.gamma)
        if any(len(v) != c for v in (self.beta, self.running_mean, self.running_var)):
            raise ShapeMismatch("batch-norm parameter vectors differ in length")
        if np.any(np.asarray(self.running_var) < 0):
            raise ValidationError("running_var must be non-negative")


@dataclass
class BNCache:
    xhat: np.ndarray
    inv_std: np.ndarray
    gamma: np.ndarray
    training: bool
    new_mean: np.ndarray | None = field(default=None)
    new_var: np.ndarray | None = field(default=None)


def batch_norm_forward(x, gamma, beta, running_mean, running_var, training: bool,
                       eps=BN_EPS, momentum=BN_MOMENTUM):
    """Returns ``(y, cache)``; in training mode the cache carries updated running stats."""
    if x.ndim != 4 or x.shape[1] != len(gamma):
        raise ShapeMismatch(f"batch-norm over {len(gamma)} channels got input {x.shape}")
    dt = x.dtype
    gamma = np.asarray(gamma, dt)
    beta = np.asarray(beta, dt)
    if training:
        count = x.shape[0] * x.shape[2] * x.shape[3]
        if count < 1:
            raise EmptySpatial("training-mode batch norm needs N*H*W >= 1")
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        unbiased = var * (count / (count - 1)) if count > 1 else var
        new_mean = ((1 - momentum) * running_mean + momentum * mean).astype(np.asarray(running_mean).dtype)
        new_var = ((1 - momentum) * running_var + momentum * unbiased).astype(np.asarray(running_var).dtype)
    else:
        mean = np.asarray(running_mean, dt)
        var = np.asarray(running_var, dt)
        new_mean = new_var = None
    inv_std = (1.0 / np.sqrt(var + dt.type(eps))).astype(dt)
    xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    y = xhat * gamma[None, :, None, None] + beta[None, :, None, None]
    return y, BNCache(xhat, inv_std, gamma, training, new_mean, new_var)


def batch_norm(x, p: BatchNormParams, mode: str = "train"):
    """Apply batch norm; in ``train`` mode ``p``'s running stats are updated in place."""
    if mode not in ("train", "eval"):
        raise ValidationError(f"batch-norm mode must be 'train' or 'eval', got {mode!r}")
    y, cache = batch_norm_forward(x, p.gamma, p.beta, p.running_mean, p.running_var,
                                  mode == "train", p.eps, p.momentum)
    if cache.training:
        p.running_mean, p.running_var = cache.new_mean, cache.new_var
    return y


def batch_norm_backward(dy, cache: BNCache):
    """Gradients ``(dx, dgamma, dbeta)``; train mode differentiates through batch stats."""
    axes = (0, 2, 3)
    dbeta = dy.sum(axis=axes)
    dgamma = (dy * cache.xhat).sum(axis=axes)
    dxhat = dy * cache.gamma[None, :, None, None]
    inv = cache.inv_std[None, :, None, None]
    if not cache.training:
        return dxhat * inv, dgamma, dbeta
    m = dy.shape[0] * dy.shape[2] * dy.shape[3]
    mean_dxhat = dxhat.sum(axis=axes, keepdims=True) / m
    mean_dxhat_xhat = (dxhat * cache.xhat).sum(axis=axes, keepdims=True) / m
    dx = inv * (dxhat - mean_dxhat - cache.xhat * mean_dxhat_xhat)
    return dx, dgamma, dbeta


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def relu(x):
    return np.maximum(x, 0).astype(x.dtype, copy=False)


def relu_backward(dy, x):
    # subgradient at exactly 0 is 0
    return dy * (x > 0)


def sigmoid(x):
    x = np.asarray(x)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1 / (1 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1 + ex)
    return out


def sigmoid_backward(dy, y):
    return dy * y * (1 - y)


# ---------------------------------------------------------------------------
# pooling
# ---------------------------------------------------------------------------

def global_avg_pool(x):
    if x.ndim != 4:
        raise ShapeMismatch(f"global_avg_pool expects rank 4, got {x.shape}")
    if x.shape[2] * x.shape[3] == 0:
        raise EmptySpatial("global average pool over an empty spatial extent")
    return x.mean(axis=(2, 3), keepdims=True).astype(x.dtype, copy=False)


def global_avg_pool_backward(dy, x_shape):
    h, w = x_shape[2], x_shape[3]
    return np.broadcast_to(dy / (h * w), x_shape).astype(dy.dtype)


def _pool_windows(xp, k, stride, h_out, w_out):
    for ky in range(k):
        for kx in range(k):
            yield ky, kx, xp[:, :, ky:ky + stride * h_out:stride, kx:kx + stride * w_out:stride]


def _pool_geometry(x, k, stride, padding):
    if x.ndim != 4:
        raise ShapeMismatch(f"pooling expects rank 4, got {x.shape}")
    if k < 1 or stride < 1 or padding < 0 or 2 * padding > k:
        raise ValidationError(f"bad pooling geometry k={k} stride={stride} padding={padding}")
    h_out = conv_out_size(x.shape[2], k, stride, padding)
    w_out = conv_out_size(x.shape[3], k, stride, padding)
    if h_out < 1 or w_out < 1:
        raise ShapeMismatch(f"input {x.shape[2:]} too small for pooling window {k}")
    return h_out, w_out


def avg_pool2d(x, k, stride, padding=0):
    """Window mean over zero-padded input; the divisor is always ``k*k``."""
    h_out, w_out = _pool_geometry(x, k, stride, padding)
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out = np.zeros(x.shape[:2] + (h_out, w_out), dtype=x.dtype)
    for _, _, win in _pool_windows(xp, k, stride, h_out, w_out):
        out += win
    return out / x.dtype.type(k * k)


def avg_pool2d_backward(dy, x_shape, k, stride, padding=0):
    n, c, h, w = x_shape
    h_out, w_out = dy.shape[2], dy.shape[3]
    dxp = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=dy.dtype)
    share = dy / dy.dtype.type(k * k)
    for ky in range(k):
        for kx in range(k):
            dxp[:, :, ky:ky + stride * h_out:stride, kx:kx + stride * w_out:stride] += share
    return np.ascontiguousarray(dxp[:, :, padding:padding + h, padding:padding + w])


def max_pool2d_forward(x, k, stride, padding=0):
    """Returns ``(y, argmax)`` where ``argmax`` holds the winning window offset ``ky*k+kx``."""
    h_out, w_out = _pool_geometry(x, k, stride, padding)
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)),
                constant_values=-np.inf)
    out = np.full(x.shape[:2] + (h_out, w_out), -np.inf, dtype=x.dtype)
    arg = np.zeros(out.shape, dtype=np.int32)
    for ky, kx, win in _pool_windows(xp, k, stride, h_out, w_out):
        better = win > out
        out = np.where(better, win, out)
        arg[better] = ky * k + kx
    return out, arg


def max_pool2d(x, k, stride, padding=0):
    return max_pool2d_forward(x, k, stride, padding)[0]


def max_pool2d_backward(dy, argmax, x_shape, k, stride, padding=0):
    n, c, h, w = x_shape
    h_out, w_out = dy.shape[2], dy.shape[3]
    dxp = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=dy.dtype)
    for ky in range(k):
        for kx in range(k):
            dxp[:, :, ky:ky + stride * h_out:stride, kx:kx + stride * w_out:stride] += (
                dy * (argmax == ky * k + kx)
            )
    return np.ascontiguousarray(dxp[:, :, padding:padding + h, padding:padding + w])


# ---------------------------------------------------------------------------
# fully connected
# ---------------------------------------------------------------------------

def fully_connected(x, weight, bias):
    """``y = x @ W.T + b`` for ``x`` of shape (N, C) or (N, C, 1, 1)."""
    if x.ndim == 4:
        if x.shape[2:] != (1, 1):
            raise ShapeMismatch(f"fully_connected takes (N, C, 1, 1) maps, got {x.shape}")
        x = x.reshape(x.shape[0], x.shape[1])
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeMismatch(f"fully_connected: input {x.shape} vs weight {weight.shape}")
    if bias.shape != (weight.shape[0],):
        raise ShapeMismatch(f"bias {bias.shape} does not match {weight.shape[0]} outputs")
    return x @ weight.T.astype(x.dtype, copy=False) + bias.astype(x.dtype, copy=False)


def fully_connected_backward(dy, x2d, weight):
    return dy @ weight.astype(dy.dtype, copy=False), dy.T @ x2d, dy.sum(axis=0)
