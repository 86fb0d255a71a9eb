"""Reverse-mode differentiation on a linear tape.

Every differentiable op appends one record to the tape of its inputs. The
backward pass walks the records in exact reverse order, so a record's
inputs always precede it (recording order is a topological order).

Example::

    tape = Tape()
    x = tape.leaf(np.ones((1, 1, 2, 2)), "x")
    loss = ops.sum(ops.relu(x))
    grads = tape.backward(loss)
    grads[x]          # all ones
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import nnops
from . import tensor as T
from .errors import NotScalarLoss, ShapeMismatch, ValidationError


class Var:
    """A value slot on a tape."""

    __slots__ = ("value", "tape", "index", "name")

    def __init__(self, value: np.ndarray, tape: "Tape", index: int, name: str | None = None):
        self.value = value
        self.tape = tape
        self.index = index
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"<Var#{self.index}{label} shape={self.value.shape} dtype={self.value.dtype}>"


@dataclass
class _Record:
    op: str
    inputs: tuple[int, ...]
    output: int
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Gradients(Mapping):
    """Gradients keyed by :class:`Var`; slots the loss never reached read as zeros."""

    def __init__(self, tape: "Tape", grads: dict[int, np.ndarray]):
        self._tape = tape
        self._grads = grads

    def __getitem__(self, var: Var) -> np.ndarray:
        if var.tape is not self._tape:
            raise KeyError(var)
        g = self._grads.get(var.index)
        return np.zeros_like(var.value) if g is None else g

    def __iter__(self):
        return iter(self._tape.vars)

    def __len__(self):
        return len(self._tape.vars)


class Tape:
    def __init__(self):
        self.vars: list[Var] = []
        self.records: list[_Record] = []
        # running statistics produced by training-mode batch norm, keyed by name
        self.buffer_updates: dict[str, np.ndarray] = {}
        # discrete branch decisions (ReLU masks, max-pool winners); the
        # gradient checker uses them to detect perturbations that cross a kink
        self.kinks: list[np.ndarray] = []

    def leaf(self, value, name: str | None = None) -> Var:
        value = np.asarray(value)
        var = Var(value, self, len(self.vars), name)
        self.vars.append(var)
        return var

    def record(self, op: str, inputs: Sequence[Var], value: np.ndarray, backward) -> Var:
        for v in inputs:
            if v.tape is not self:
                raise ValidationError(f"{op}: input {v!r} belongs to another tape")
        out = self.leaf(value)
        self.records.append(_Record(op, tuple(v.index for v in inputs), out.index, backward))
        return out

    def backward(self, loss: Var) -> Gradients:
        if loss.tape is not self:
            raise ValidationError("loss was not recorded on this tape")
        if loss.value.size != 1:
            raise NotScalarLoss(f"backward needs a scalar loss, got shape {loss.value.shape}")
        grads: dict[int, np.ndarray] = {loss.index: np.ones_like(loss.value)}
        for rec in reversed(self.records):
            g = grads.get(rec.output)
            if g is None:
                continue
            for idx, gi in zip(rec.inputs, rec.backward(g)):
                if gi is None:
                    continue
                if gi.shape != self.vars[idx].value.shape:
                    raise ShapeMismatch(
                        f"{rec.op} backward produced {gi.shape} for input of shape "
                        f"{self.vars[idx].value.shape}"
                    )
                if idx in grads:
                    grads[idx] = grads[idx] + gi
                else:
                    grads[idx] = gi
        return Gradients(self, grads)


# ---------------------------------------------------------------------------
# differentiable ops
# ---------------------------------------------------------------------------

class ops:
    """Namespace of differentiable operations (``ops.conv2d(x, w, ...)``)."""

    @staticmethod
    def conv2d(x: Var, w: Var, stride=1, padding=0, groups=1) -> Var:
        wv = w.value.astype(x.dtype, copy=False)
        y, cols = nnops.conv2d_forward(x.value, wv, stride, padding, groups)
        x_shape = x.shape

        def back(g):
            dx, dw = nnops.conv2d_backward(g, x_shape, wv, cols, stride, padding, groups)
            return dx, dw.astype(w.dtype, copy=False)

        return x.tape.record("conv2d", (x, w), y, back)

    @staticmethod
    def batch_norm(x: Var, gamma: Var, beta: Var, running_mean, running_var,
                   training: bool, name: str | None = None,
                   eps=nnops.BN_EPS, momentum=nnops.BN_MOMENTUM) -> Var:
        y, cache = nnops.batch_norm_forward(x.value, gamma.value, beta.value,
                                            running_mean, running_var, training, eps, momentum)
        if training and name is not None:
            x.tape.buffer_updates[f"{name}.running_mean"] = cache.new_mean
            x.tape.buffer_updates[f"{name}.running_var"] = cache.new_var

        def back(g):
            dx, dgamma, dbeta = nnops.batch_norm_backward(g, cache)
            return dx, dgamma.astype(gamma.dtype, copy=False), dbeta.astype(beta.dtype, copy=False)

        return x.tape.record("batch_norm", (x, gamma, beta), y, back)

    @staticmethod
    def relu(x: Var) -> Var:
        xv = x.value
        x.tape.kinks.append(xv > 0)
        return x.tape.record("relu", (x,), nnops.relu(xv), lambda g: (nnops.relu_backward(g, xv),))

    @staticmethod
    def sigmoid(x: Var) -> Var:
        y = nnops.sigmoid(x.value)
        return x.tape.record("sigmoid", (x,), y, lambda g: (nnops.sigmoid_backward(g, y),))

    @staticmethod
    def global_avg_pool(x: Var) -> Var:
        shape = x.shape
        return x.tape.record("global_avg_pool", (x,), nnops.global_avg_pool(x.value),
                             lambda g: (nnops.global_avg_pool_backward(g, shape),))

    @staticmethod
    def avg_pool2d(x: Var, k: int, stride: int, padding: int = 0) -> Var:
        shape = x.shape
        return x.tape.record("avg_pool2d", (x,), nnops.avg_pool2d(x.value, k, stride, padding),
                             lambda g: (nnops.avg_pool2d_backward(g, shape, k, stride, padding),))

    @staticmethod
    def max_pool2d(x: Var, k: int, stride: int, padding: int = 0) -> Var:
        shape = x.shape
        y, arg = nnops.max_pool2d_forward(x.value, k, stride, padding)
        x.tape.kinks.append(arg)
        return x.tape.record(
            "max_pool2d", (x,), y,
            lambda g: (nnops.max_pool2d_backward(g, arg, shape, k, stride, padding),))

    @staticmethod
    def linear(x: Var, weight: Var, bias: Var) -> Var:
        """Fully connected layer; (N, C) or (N, C, 1, 1) in, (N, C_out) out."""
        x_shape = x.shape
        x2d = x.value.reshape(x_shape[0], -1)
        y = nnops.fully_connected(x.value, weight.value, bias.value)

        def back(g):
            dx, dw, db = nnops.fully_connected_backward(g, x2d, weight.value)
            return dx.reshape(x_shape), dw.astype(weight.dtype, copy=False), db.astype(bias.dtype, copy=False)

        return x.tape.record("linear", (x, weight, bias), y, back)

    @staticmethod
    def add(a: Var, b: Var) -> Var:
        return a.tape.record("add", (a, b), T.add(a.value, b.value), lambda g: (g, g))

    @staticmethod
    def scale_channels(u: Var, e: Var) -> Var:
        """``u * e`` with ``e`` of shape (N, C) or (N, C, 1, 1) broadcast over space."""
        ev = e.value.reshape(e.shape[0], e.shape[1], 1, 1)
        if ev.shape[:2] != u.shape[:2]:
            raise ShapeMismatch(f"channel scales {e.shape} do not match {u.shape}")
        uv = u.value
        e_shape = e.shape
        return u.tape.record(
            "scale_channels", (u, e), uv * ev,
            lambda g: (g * ev, (g * uv).sum(axis=(2, 3)).reshape(e_shape)))

    @staticmethod
    def split_channels(x: Var, s: int) -> list[Var]:
        parts = T.split_channels(x.value, s)
        step = x.shape[1] // s
        out = []
        for i, part in enumerate(parts):
            def back(g, i=i):
                full = np.zeros(x.shape, dtype=g.dtype)
                full[:, i * step:(i + 1) * step] = g
                return (full,)
            out.append(x.tape.record("split_channels", (x,), part, back))
        return out

    @staticmethod
    def concat_channels(parts: Sequence[Var]) -> Var:
        value = T.concat_channels([p.value for p in parts])
        bounds = np.cumsum([0] + [p.shape[1] for p in parts])

        def back(g):
            return tuple(np.ascontiguousarray(g[:, a:b]) for a, b in zip(bounds[:-1], bounds[1:]))

        return parts[0].tape.record("concat_channels", tuple(parts), value, back)

    @staticmethod
    def sum(x: Var) -> Var:
        shape = x.shape
        return x.tape.record("sum", (x,), np.asarray(x.value.sum(), dtype=x.dtype),
                             lambda g: (np.broadcast_to(g, shape).astype(g.dtype),))

    @staticmethod
    def weighted_sum(x: Var, weights: np.ndarray) -> Var:
        """``sum(x * weights)`` with a constant weight array."""
        weights = np.asarray(weights, dtype=x.dtype)
        return x.tape.record("weighted_sum", (x,), np.asarray((x.value * weights).sum(), x.dtype),
                             lambda g: (g * weights,))

    @staticmethod
    def flatten(x: Var) -> Var:
        shape = x.shape
        return x.tape.record("flatten", (x,), x.value.reshape(shape[0], -1),
                             lambda g: (g.reshape(shape),))

    @staticmethod
    def softmax_cross_entropy(logits: Var, labels: np.ndarray) -> Var:
        """Mean cross-entropy of softmax(logits) against integer labels."""
        z = logits.value
        labels = np.asarray(labels)
        if z.ndim != 2 or labels.shape != (z.shape[0],):
            raise ShapeMismatch(f"logits {z.shape} vs labels {labels.shape}")
        n = z.shape[0]
        shifted = z - z.max(axis=1, keepdims=True)
        logsum = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        logp = shifted - logsum
        loss = np.asarray(-logp[np.arange(n), labels].mean(), dtype=z.dtype)

        def back(g):
            d = np.exp(logp)
            d[np.arange(n), labels] -= 1
            return (d * (g / n),)

        return logits.tape.record("softmax_cross_entropy", (logits,), loss, back)


# ---------------------------------------------------------------------------
# finite-difference checking
# ---------------------------------------------------------------------------

def relative_error(a, n):
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


@dataclass
class ParamCheck:
    name: str
    max_rel_error: float
    compared: int
    skipped: int


@dataclass
class GradCheckReport:
    threshold: float
    params: list[ParamCheck] = field(default_factory=list)

    @property
    def max_rel_error(self) -> float:
        return max((p.max_rel_error for p in self.params), default=0.0)

    @property
    def compared(self) -> int:
        return sum(p.compared for p in self.params)

    @property
    def passed(self) -> bool:
        return self.compared > 0 and self.max_rel_error < self.threshold

    def summary(self) -> str:
        lines = [f"{'tensor':<32} {'checked':>7} {'skipped':>7} {'max rel err':>12}"]
        for p in self.params:
            lines.append(f"{p.name:<32} {p.compared:>7} {p.skipped:>7} {p.max_rel_error:>12.3e}")
        verdict = "PASS" if self.passed else "FAIL"
        lines.append(f"{verdict}: max relative error {self.max_rel_error:.3e} "
                     f"(threshold {self.threshold:.1e}, {self.compared} coordinates)")
        return "\n".join(lines)


def _evaluate(fn, values):
    tape = Tape()
    leaves = {k: tape.leaf(v, k) for k, v in values.items()}
    loss = fn(tape, leaves)
    return tape, leaves, loss


def _same_kinks(a: list[np.ndarray], b: list[np.ndarray]) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def grad_check(fn: Callable[[Tape, dict[str, Var]], Var], values: Mapping[str, np.ndarray],
               epsilon: float = 1e-6, threshold: float = 1e-4, max_samples: int = 64,
               seed: int = 0, check: Sequence[str] | None = None) -> GradCheckReport:
    """Compare tape gradients of ``fn`` against central differences in float64.

    ``fn(tape, leaves)`` must build a scalar loss from the named leaves. Up to
    ``max_samples`` coordinates per tensor are probed (all of them when the
    tensor is no larger). A coordinate is skipped when either perturbation
    flips a ReLU mask or a max-pool winner relative to the base point.
    """
    if not 1e-6 <= epsilon <= 1e-3:
        raise ValidationError(f"epsilon must lie in [1e-6, 1e-3], got {epsilon}")
    base = {k: np.array(v, dtype=np.float64) for k, v in values.items()}
    tape, leaves, loss = _evaluate(fn, base)
    if loss.value.dtype != np.float64:
        raise ValidationError("grad_check must run on the float64 path")
    grads = tape.backward(loss)
    base_kinks = tape.kinks
    rng = np.random.default_rng(seed)
    report = GradCheckReport(threshold)
    for name in (check if check is not None else list(base)):
        arr = base[name]
        analytic = grads[leaves[name]]
        size = arr.size
        coords = np.arange(size) if size <= max_samples else rng.choice(size, max_samples, replace=False)
        worst, compared, skipped = 0.0, 0, 0
        for flat in coords:
            idx = np.unravel_index(flat, arr.shape)
            orig = arr[idx]
            arr[idx] = orig + epsilon
            tp, _, fp = _evaluate(fn, base)
            arr[idx] = orig - epsilon
            tm, _, fm = _evaluate(fn, base)
            arr[idx] = orig
            if not (_same_kinks(tp.kinks, base_kinks) and _same_kinks(tm.kinks, base_kinks)):
                skipped += 1
                continue
            numeric = (float(fp.value) - float(fm.value)) / (2 * epsilon)
            worst = max(worst, float(relative_error(float(analytic[idx]), numeric)))
            compared += 1
        report.params.append(ParamCheck(name, worst, compared, skipped))
    return report
