"""Dataset ingestion: CIFAR-100 binary files and a synthetic multi-scale task."""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from ..errors import BadRecordLength, ShapeMismatch, ValidationError

CIFAR_RECORD = 3074  # coarse label, fine label, 3 x 32 x 32 pixel planes
CIFAR_SIDE = 32


@dataclass
class Dataset:
    """Standardized images ``(N, 3, H, W)`` with integer labels.

    ``mean``/``std`` are the per-channel constants applied to the [0, 1]
    pixels. ``boxes`` (synthetic data only) holds the inclusive
    ``(top, left, bottom, right)`` of each sample's class pattern.
    """

    images: np.ndarray
    labels: np.ndarray
    class_count: int
    mean: np.ndarray
    std: np.ndarray
    boxes: np.ndarray | None = None

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ShapeMismatch(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ValidationError(f"labels must lie in [0, {self.class_count})")

    def __len__(self):
        return len(self.labels)

    def subset(self, index) -> "Dataset":
        boxes = None if self.boxes is None else self.boxes[index]
        return Dataset(self.images[index], self.labels[index], self.class_count, self.mean, self.std, boxes)


def channel_stats(raw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if len(raw) == 0:
        return np.zeros(raw.shape[1], np.float32), np.ones(raw.shape[1], np.float32)
    mean = raw.mean(axis=(0, 2, 3))
    std = raw.std(axis=(0, 2, 3))
    return mean.astype(np.float32), np.where(std > 0, std, 1).astype(np.float32)


def standardize(raw: np.ndarray, mean, std) -> np.ndarray:
    out = (raw - mean[None, :, None, None]) / std[None, :, None, None]
    return np.ascontiguousarray(out, dtype=np.float32)


def _cifar_file(path, split):
    if os.path.isdir(path):
        return os.path.join(path, f"{split}.bin")
    return path


def load_cifar100(path, split: str = "train", limit: int = 0, stats=None) -> Dataset:
    """Read a CIFAR-100 binary file (or a directory holding ``train.bin``/``test.bin``).

    Fine labels are used. ``limit`` > 0 keeps the first ``limit`` records;
    ``stats`` = ``(mean, std)`` reuses training-split constants.
    """
    if split not in ("train", "test"):
        raise ValidationError(f"split must be 'train' or 'test', got {split!r}")
    raw = np.fromfile(_cifar_file(path, split), dtype=np.uint8)
    if raw.size % CIFAR_RECORD:
        raise BadRecordLength(f"{raw.size} bytes is not a whole number of {CIFAR_RECORD}-byte records")
    records = raw.reshape(-1, CIFAR_RECORD)
    if limit and limit > 0:
        records = records[:limit]
    labels = records[:, 1].astype(np.int64)
    pixels = records[:, 2:].reshape(-1, 3, CIFAR_SIDE, CIFAR_SIDE).astype(np.float32) / 255.0
    mean, std = stats if stats is not None else channel_stats(pixels)
    return Dataset(standardize(pixels, mean, std), labels, 100, np.asarray(mean, np.float32),
                   np.asarray(std, np.float32))


def write_cifar100(path, images_u8: np.ndarray, fine: np.ndarray, coarse=None) -> None:
    """Write records in the CIFAR-100 binary layout (used for fixtures)."""
    n = len(fine)
    coarse = np.zeros(n, np.uint8) if coarse is None else np.asarray(coarse, np.uint8)
    rec = np.empty((n, CIFAR_RECORD), np.uint8)
    rec[:, 0] = coarse
    rec[:, 1] = fine
    rec[:, 2:] = np.asarray(images_u8, np.uint8).reshape(n, -1)
    rec.tofile(path)


# 3x3 class motifs, pairwise distinct
MOTIFS = np.array([
    [[1, 1, 1], [1, 0, 1], [1, 1, 1]],  # ring
    [[1, 0, 1], [0, 1, 0], [1, 0, 1]],  # saltire
    [[0, 1, 0], [1, 1, 1], [0, 1, 0]],  # plus
    [[1, 1, 1], [1, 1, 1], [1, 1, 1]],  # block
    [[1, 0, 0], [0, 1, 0], [0, 0, 1]],  # diagonal
    [[0, 0, 1], [0, 1, 0], [1, 0, 0]],  # anti-diagonal
    [[1, 1, 1], [0, 0, 0], [1, 1, 1]],  # bars
    [[1, 0, 1], [1, 0, 1], [1, 0, 1]],  # columns
], dtype=np.float32)
PATTERN_SCALES = (1, 2, 3)


def gen_synthetic_multiscale(n: int, class_count: int = 4, image_size: int = 16, seed: int = 42,
                             noise: float = 0.25, stats=None) -> Dataset:
    """Images holding one class pattern drawn at a random scale and position.

    A pattern is the class's 3x3 motif upscaled by a factor from
    ``PATTERN_SCALES`` and framed by a one-pixel quiet (zero) border; it is
    pasted over uniform background noise, so one class appears at several
    sizes. ``boxes`` covers the whole framed tile. Labels cycle through the
    classes before shuffling.
    """
    if image_size < 16:
        raise ValidationError(f"image_size must be >= 16, got {image_size}")
    if not 1 <= class_count <= len(MOTIFS):
        raise ValidationError(f"class_count must be in [1, {len(MOTIFS)}]")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % class_count).astype(np.int64)
    raw = (rng.uniform(0.0, noise, (n, 3, image_size, image_size))).astype(np.float32)
    boxes = np.zeros((n, 4), np.int64)
    for i, label in enumerate(labels):
        f = PATTERN_SCALES[rng.integers(len(PATTERN_SCALES))]
        tile = np.pad(np.kron(MOTIFS[label], np.ones((f, f), np.float32)), 1)
        side = tile.shape[0]
        top, left = rng.integers(0, image_size - side + 1, size=2)
        raw[i, :, top:top + side, left:left + side] = tile
        boxes[i] = (top, left, top + side - 1, left + side - 1)
    mean, std = stats if stats is not None else channel_stats(raw)
    return Dataset(standardize(raw, mean, std), labels, class_count,
                   np.asarray(mean, np.float32), np.asarray(std, np.float32), boxes)
