"""SGD training loop and top-k evaluation."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..autodiff import Tape, ops
from ..errors import EmptyDataset, ShapeMismatch, ValidationError
from ..res2net import Bound, NetworkSpec, is_buffer, network_forward, predict
from .data import Dataset

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr0: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    lr_step: int = 30
    epochs: int = 1
    batch_size: int = 32
    seed: int = 42
    augment: bool = False
    # stop once an epoch's running training accuracy reaches this fraction
    stop_at_accuracy: float | None = None

    def __post_init__(self):
        if self.lr0 <= 0 or self.lr_step < 1 or self.batch_size < 1 or self.epochs < 0:
            raise ValidationError(f"invalid training config {self}")
        if not 0 <= self.momentum < 1 or self.weight_decay < 0:
            raise ValidationError("momentum must be in [0, 1) and weight_decay >= 0")


@dataclass
class EpochLog:
    epoch: int
    loss: float
    accuracy: float
    lr: float


@dataclass
class EvalResult:
    top1_error: float
    top5_error: float
    count: int


def lr_at(cfg: TrainConfig, epoch: int) -> float:
    """Step schedule: the rate drops tenfold every ``lr_step`` epochs (epoch is 0-based)."""
    return cfg.lr0 * 10.0 ** (-(epoch // cfg.lr_step))


def decays(name: str) -> bool:
    """Weight decay applies to conv and FC weights only."""
    return name.endswith(".weight")


def sgd_step(params: dict, grads: dict, velocity: dict, lr: float, momentum: float,
             weight_decay: float) -> None:
    """Heavy-ball update in place: ``v = m*v + (g + wd*theta)``, ``theta -= lr*v``."""
    for name, g in grads.items():
        theta = params[name]
        step = g + weight_decay * theta if decays(name) else g
        v = velocity.get(name)
        v = step if v is None else momentum * v + step
        velocity[name] = v.astype(theta.dtype, copy=False)
        params[name] = (theta - lr * velocity[name]).astype(theta.dtype, copy=False)


def _augment(batch: np.ndarray, rng) -> np.ndarray:
    """Random horizontal flip and 4-pixel pad-and-crop."""
    out = np.empty_like(batch)
    n, _, h, w = batch.shape
    padded = np.pad(batch, ((0, 0), (0, 0), (4, 4), (4, 4)))
    flips = rng.random(n) < 0.5
    offsets = rng.integers(0, 9, size=(n, 2))
    for i in range(n):
        dy, dx = offsets[i]
        img = padded[i, :, dy:dy + h, dx:dx + w]
        out[i] = img[:, :, ::-1] if flips[i] else img
    return out


def _check(spec: NetworkSpec, dataset: Dataset):
    if len(dataset) == 0:
        raise EmptyDataset("dataset is empty")
    if dataset.class_count != spec.num_classes:
        raise ShapeMismatch(f"dataset has {dataset.class_count} classes, network head {spec.num_classes}")
    if dataset.images.shape[1] != spec.stem.in_channels:
        raise ShapeMismatch(f"images have {dataset.images.shape[1]} channels, stem expects {spec.stem.in_channels}")


def train(spec: NetworkSpec, params: dict, dataset: Dataset, cfg: TrainConfig,
          on_epoch: Callable[[EpochLog], None] | None = None):
    """Train with softmax cross-entropy; returns ``(new_params, epoch_logs)``.

    ``params`` is not modified. Shuffling and augmentation draw from a
    generator seeded with ``cfg.seed``.
    """
    _check(spec, dataset)
    params = {k: v.copy() for k, v in params.items()}
    rng = np.random.default_rng(cfg.seed)
    velocity: dict = {}
    logs: list[EpochLog] = []
    n = len(dataset)
    for epoch in range(cfg.epochs):
        lr = lr_at(cfg, epoch)
        order = rng.permutation(n)
        total_loss, correct = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            images = dataset.images[idx]
            if cfg.augment:
                images = _augment(images, rng)
            labels = dataset.labels[idx]
            tape = Tape()
            bound = Bound(tape, params)
            logits = network_forward(spec, bound, tape.leaf(images, "input"), training=True)
            loss = ops.softmax_cross_entropy(logits, labels)
            grads = tape.backward(loss)
            trainable = {k: grads[v] for k, v in bound.leaves.items() if not is_buffer(k)}
            sgd_step(params, trainable, velocity, lr, cfg.momentum, cfg.weight_decay)
            params.update(tape.buffer_updates)
            total_loss += float(loss.value) * len(idx)
            correct += int((logits.value.argmax(axis=1) == labels).sum())
        entry = EpochLog(epoch, total_loss / n, correct / n, lr)
        logs.append(entry)
        log.debug("epoch %d loss %.4f acc %.3f lr %g", epoch, entry.loss, entry.accuracy, lr)
        if on_epoch is not None:
            on_epoch(entry)
        if cfg.stop_at_accuracy is not None and entry.accuracy >= cfg.stop_at_accuracy:
            break
    return params, logs


def topk_error(logits: np.ndarray, labels: np.ndarray, k: int) -> float:
    """Fraction of rows whose label is outside the ``k`` largest logits (ties: lower index wins)."""
    k = min(k, logits.shape[1])
    ranked = np.argsort(-logits, axis=1, kind="stable")[:, :k]
    hit = (ranked == labels[:, None]).any(axis=1)
    return float(1.0 - hit.mean())


def evaluate(spec: NetworkSpec, params: dict, dataset: Dataset, batch_size: int = 256) -> EvalResult:
    _check(spec, dataset)
    logits = predict(spec, params, dataset.images, batch_size)
    return EvalResult(topk_error(logits, dataset.labels, 1), topk_error(logits, dataset.labels, 5), len(dataset))
