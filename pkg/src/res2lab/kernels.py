"""Kernel backend selection.

The compiled extension is used when importable; otherwise the numpy fallback
is loaded. Set ``RES2LAB_BACKEND=python`` to force the fallback.
"""
from __future__ import annotations

import contextlib
import os
from types import ModuleType

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

BACKENDS: dict[str, ModuleType] = {"python": _pykernels}
if _ckernels is not None:
    BACKENDS["cython"] = _ckernels


def _initial_backend() -> str:
    requested = os.environ.get("RES2LAB_BACKEND", "").strip().lower()
    if requested:
        if requested not in BACKENDS:
            raise ImportError(f"RES2LAB_BACKEND={requested!r} is not available; have {sorted(BACKENDS)}")
        return requested
    return "cython" if "cython" in BACKENDS else "python"


_active = _initial_backend()


def backend_name() -> str:
    return _active


def available() -> list[str]:
    return sorted(BACKENDS)


def set_backend(name: str) -> None:
    global _active
    if name not in BACKENDS:
        raise ValueError(f"unknown kernel backend {name!r}; available: {available()}")
    _active = name


@contextlib.contextmanager
def use_backend(name: str):
    previous = _active
    set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)


def _impl() -> ModuleType:
    return BACKENDS[_active]


def conv2d_direct(x, w, stride, pad, groups):
    return _impl().conv2d_direct(x, w, stride, pad, groups)


def im2col(x, k, stride, pad):
    return _impl().im2col(x, k, stride, pad)


def col2im(cols, n, c, h, w, k, stride, pad):
    return _impl().col2im(cols, n, c, h, w, k, stride, pad)
