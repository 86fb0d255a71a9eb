"""NCHW tensor helpers.

Tensors are plain contiguous ``numpy.ndarray`` objects of rank 4. Model data
is float32; float64 arrays flow through the same functions for gradient
checking.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import NonDivisibleChannels, ShapeMismatch

MODEL_DTYPE = np.float32


def as_tensor(data, dtype=None) -> np.ndarray:
    """Return a C-contiguous rank-4 array (float32 unless ``dtype`` given)."""
    arr = np.ascontiguousarray(data, dtype=dtype or MODEL_DTYPE)
    if arr.ndim != 4:
        raise ShapeMismatch(f"expected rank-4 NCHW tensor, got shape {arr.shape}")
    return arr


def zeros(shape: Sequence[int], dtype=MODEL_DTYPE) -> np.ndarray:
    return np.zeros(tuple(shape), dtype=dtype)


def _check_rank4(t: np.ndarray, what: str = "tensor") -> None:
    if t.ndim != 4:
        raise ShapeMismatch(f"{what} must be rank 4 (N, C, H, W), got shape {t.shape}")


def split_channels(t: np.ndarray, s: int) -> list[np.ndarray]:
    """Split ``t`` into ``s`` equal channel groups, each a fresh copy."""
    _check_rank4(t)
    if s < 1:
        raise NonDivisibleChannels(f"split count must be positive, got {s}")
    c = t.shape[1]
    if c % s:
        raise NonDivisibleChannels(f"{c} channels cannot be split into {s} equal subsets")
    step = c // s
    return [np.array(t[:, i * step:(i + 1) * step], copy=True, order="C") for i in range(s)]


def concat_channels(parts: Sequence[np.ndarray]) -> np.ndarray:
    """Concatenate along the channel axis, preserving list order."""
    if not parts:
        raise ShapeMismatch("concat_channels needs at least one tensor")
    for p in parts:
        _check_rank4(p, "concat part")
    n, _, h, w = parts[0].shape
    for p in parts[1:]:
        if (p.shape[0], p.shape[2], p.shape[3]) != (n, h, w):
            raise ShapeMismatch(
                f"concat parts disagree on batch/spatial dims: {parts[0].shape} vs {p.shape}"
            )
    return np.concatenate(parts, axis=1)


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise ShapeMismatch(f"add requires identical shapes, got {a.shape} and {b.shape}")
    return a + b
