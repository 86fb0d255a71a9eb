"""Grad-CAM heat maps."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import Tape, ops
from ..errors import ShapeMismatch, UnknownLayer, ValidationError
from ..res2net import Bound, NetworkSpec, network_forward


@dataclass
class CamResult:
    heatmap: np.ndarray          # (1, 1, h, w) at the target layer's resolution, in [0, 1]
    upsampled: np.ndarray | None  # (1, 1, H, W) at input resolution
    logits: np.ndarray

    def peak(self, upsampled: bool = True) -> tuple[int, int]:
        m = self.upsampled if upsampled and self.upsampled is not None else self.heatmap
        row, col = np.unravel_index(int(np.argmax(m[0, 0])), m.shape[2:])
        return int(row), int(col)


def cam_from_activations(acts: np.ndarray, grads: np.ndarray) -> np.ndarray:
    """Weighted channel sum ``relu(sum_k mean(dA_k) * A_k)``, min-max normalized.

    A map whose maximum is 0 stays all-zero; a constant positive map becomes all ones.
    """
    if acts.shape != grads.shape or acts.ndim != 4 or acts.shape[0] != 1:
        raise ShapeMismatch(f"expected matching (1, C, h, w) arrays, got {acts.shape} / {grads.shape}")
    alpha = grads.mean(axis=(2, 3), keepdims=True)
    raw = np.maximum((alpha * acts).sum(axis=1, keepdims=True), 0)
    hi, lo = raw.max(), raw.min()
    if hi <= 0:
        return np.zeros_like(raw)
    if hi == lo:
        return np.ones_like(raw)
    return (raw - lo) / (hi - lo)


def bilinear_resize(m: np.ndarray, height: int, width: int) -> np.ndarray:
    """Resize the trailing two axes with half-pixel-centre bilinear sampling."""
    h, w = m.shape[-2:]

    def axis(n_out, n_in):
        pos = np.clip((np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5, 0, n_in - 1)
        lo = np.floor(pos).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, (pos - lo).astype(m.dtype)

    y0, y1, fy = axis(height, h)
    x0, x1, fx = axis(width, w)
    top = m[..., y0, :] * (1 - fy)[:, None] + m[..., y1, :] * fy[:, None]
    return top[..., x0] * (1 - fx) + top[..., x1] * fx


def grad_cam(spec: NetworkSpec, params: dict, image, class_id: int, target_layer: str,
             out_path=None, upsample: bool = True) -> CamResult:
    """Grad-CAM for ``class_id`` at ``target_layer`` (a name from ``spec.layer_names()``).

    ``image`` is a standardized ``(3, H, W)`` or ``(1, 3, H, W)`` array. BN
    runs in eval mode. When ``out_path`` is given the (upsampled) map is
    written there as an 8-bit PGM.
    """
    names = spec.layer_names()
    if target_layer not in names:
        raise UnknownLayer(f"unknown layer {target_layer!r}; choose from {', '.join(names)}")
    if not 0 <= class_id < spec.num_classes:
        raise ValidationError(f"class {class_id} outside [0, {spec.num_classes})")
    x = np.asarray(image, np.float32)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or x.shape[0] != 1:
        raise ShapeMismatch(f"grad_cam takes a single image, got {x.shape}")
    tape = Tape()
    taps: dict = {}
    logits = network_forward(spec, Bound(tape, params), tape.leaf(x, "input"), training=False, taps=taps)
    pick = np.zeros(logits.shape, np.float32)
    pick[0, class_id] = 1
    grads = tape.backward(ops.weighted_sum(logits, pick))
    act = taps[target_layer]
    heat = cam_from_activations(act.value, grads[act])
    up = bilinear_resize(heat, x.shape[2], x.shape[3]) if upsample else None
    if out_path is not None:
        write_pgm(out_path, (up if up is not None else heat)[0, 0])
    return CamResult(heat, up, logits.value)


def write_pgm(path, values: np.ndarray) -> None:
    """Binary (P5) 8-bit grayscale image from values in [0, 1]."""
    values = np.asarray(values, np.float64)
    if values.ndim != 2:
        raise ShapeMismatch(f"PGM needs a 2-D map, got {values.shape}")
    pixels = np.round(np.clip(values, 0, 1) * 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{pixels.shape[1]} {pixels.shape[0]}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def read_pnm(path) -> np.ndarray:
    """Read a binary PGM (P5) or PPM (P6) with maxval 255 as floats in [0, 1], shape (C, H, W)."""
    with open(path, "rb") as fh:
        data = fh.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic not in (b"P5", b"P6") or maxval != 255:
        raise ValidationError(f"unsupported image header {magic!r} maxval {maxval}")
    c = 1 if magic == b"P5" else 3
    pixels = np.frombuffer(data, np.uint8, count=w * h * c, offset=pos)
    return (pixels.reshape(h, w, c).transpose(2, 0, 1) / 255.0).astype(np.float32)
