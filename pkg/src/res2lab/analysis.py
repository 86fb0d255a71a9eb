"""Analytical complexity accounting and receptive-field analysis.

Counting conventions: a convolution has ``C_out * (C_in / groups) * k * k``
weights and costs that many multiply-accumulates per output pixel; a fully
connected layer costs ``C_in * C_out`` MACs; BN, activations and pooling
are free. One MAC is reported as one FLOP.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .autodiff import Tape, ops
from .errors import EmptyRange, InvalidConfig, InvalidDimension, InvalidTemplate, PreconditionViolation
from .nnops import conv_out_size
from .res2net import (Bound, NetworkSpec, Res2NetBlockConfig, block_forward, init_block_params,
                      kernel_indices, make_spec, with_width_scale)


@dataclass(frozen=True)
class LayerRow:
    name: str
    params: int
    macs: int
    shape: tuple[int, int, int]
    buffers: int = 0


@dataclass
class ComplexityReport:
    network: str
    resolution: int
    rows: list[LayerRow] = field(default_factory=list)

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def total_buffers(self) -> int:
        return sum(r.buffers for r in self.rows)

    @property
    def total_macs(self) -> int:
        return sum(r.macs for r in self.rows)

    @property
    def params_millions(self) -> float:
        return self.total_params / 1e6

    @property
    def gflops(self) -> float:
        return self.total_macs / 1e9

    def row(self, name: str) -> LayerRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_tsv(self) -> str:
        """``layer<TAB>params<TAB>macs<TAB>shape`` lines, shape as ``CxHxW``."""
        return "".join(f"{r.name}\t{r.params}\t{r.macs}\t{'x'.join(map(str, r.shape))}\n"
                       for r in self.rows)

    def to_table(self) -> str:
        width = max([len(r.name) for r in self.rows] + [5])
        head = f"{'layer':<{width}}  {'params':>11}  {'MACs':>15}  output"
        lines = [f"# {self.network} @ {self.resolution}x{self.resolution}", head, "-" * len(head)]
        for r in self.rows:
            lines.append(f"{r.name:<{width}}  {r.params:>11,}  {r.macs:>15,}  {'x'.join(map(str, r.shape))}")
        lines.append("-" * len(head))
        lines.append(f"{'total':<{width}}  {self.total_params:>11,}  {self.total_macs:>15,}")
        lines.append(f"params {self.params_millions:.2f}M (+{self.total_buffers:,} BN running stats), "
                     f"FLOPs {self.gflops:.2f}G")
        return "\n".join(lines) + "\n"


class _Counter:
    def __init__(self, report: ComplexityReport):
        self.report = report

    def conv(self, name, c_in, c_out, k, h_out, w_out, groups=1):
        p = c_out * (c_in // groups) * k * k
        self.report.rows.append(LayerRow(name, p, p * h_out * w_out, (c_out, h_out, w_out)))

    def bn(self, name, c, h, w):
        self.report.rows.append(LayerRow(name, 2 * c, 0, (c, h, w), buffers=2 * c))

    def fc(self, name, c_in, c_out):
        self.report.rows.append(LayerRow(name, c_in * c_out + c_out, c_in * c_out, (c_out, 1, 1)))

    def free(self, name, c, h, w):
        self.report.rows.append(LayerRow(name, 0, 0, (c, h, w)))


def _count_block(cnt: _Counter, cfg: Res2NetBlockConfig, kind: str, prefix: str, h: int, w: int):
    n = cfg.internal_channels
    cnt.conv(f"{prefix}conv1", cfg.in_channels, n, 1, h, w)
    cnt.bn(f"{prefix}bn1", n, h, w)
    ho, wo = conv_out_size(h, 3, cfg.stride, 1), conv_out_size(w, 3, cfg.stride, 1)
    if kind == "bottleneck":
        cnt.conv(f"{prefix}conv2", n, n, 3, ho, wo, cfg.cardinality)
        cnt.bn(f"{prefix}bn2", n, ho, wo)
    else:
        for i in kernel_indices(cfg):
            cnt.conv(f"{prefix}convs.{i}", cfg.width, cfg.width, 3, ho, wo, cfg.cardinality)
            cnt.bn(f"{prefix}bns.{i}", cfg.width, ho, wo)
    cnt.conv(f"{prefix}conv3", n, cfg.out_channels, 1, ho, wo)
    cnt.bn(f"{prefix}bn3", cfg.out_channels, ho, wo)
    if cfg.use_se:
        cnt.fc(f"{prefix}se.fc1", cfg.out_channels, cfg.se_hidden)
        cnt.fc(f"{prefix}se.fc2", cfg.se_hidden, cfg.out_channels)
    if cfg.has_projection:
        cnt.conv(f"{prefix}shortcut.conv", cfg.in_channels, cfg.out_channels, 1, ho, wo)
        cnt.bn(f"{prefix}shortcut.bn", cfg.out_channels, ho, wo)
    return ho, wo


def complexity(spec: NetworkSpec, resolution: int | None = None) -> ComplexityReport:
    res = resolution or spec.default_resolution
    if res < 1:
        raise InvalidConfig(f"resolution must be positive, got {res}")
    report = ComplexityReport(spec.name, res)
    cnt = _Counter(report)
    c = spec.stem.out_channels
    if spec.stem.kind == "imagenet":
        h = conv_out_size(res, 7, 2, 3)
        cnt.conv("stem.conv", spec.stem.in_channels, c, 7, h, h)
        cnt.bn("stem.bn", c, h, h)
        h = conv_out_size(h, 3, 2, 1)
        cnt.free("stem.pool", c, h, h)
    else:
        h = res
        cnt.conv("stem.conv", spec.stem.in_channels, c, 3, h, h)
        cnt.bn("stem.bn", c, h, h)
    w = h
    for name, cfg in spec.blocks():
        h, w = _count_block(cnt, cfg, spec.block, f"{name}.", h, w)
    cnt.free("pool", spec.feature_channels, 1, 1)
    cnt.fc("fc", spec.feature_channels, spec.num_classes)
    return report


def count_params(spec: NetworkSpec) -> ComplexityReport:
    return complexity(spec)


def count_macs(spec: NetworkSpec, input_resolution: int) -> ComplexityReport:
    return complexity(spec, input_resolution)


def block_param_count(cfg: Res2NetBlockConfig, kind: str = "res2net") -> int:
    report = ComplexityReport("block", 1)
    _count_block(_Counter(report), cfg, kind, "", 1, 1)
    return report.total_params


def solve_width_for_scale(baseline: NetworkSpec, scale: int,
                          w_search_range: Iterable[int] = range(1, 257)) -> int:
    """Split width whose Res2Net variant best matches ``baseline``'s parameter count.

    Ties go to the smaller width; widths that yield an invalid network are skipped.
    """
    if scale < 1:
        raise InvalidConfig(f"scale must be >= 1, got {scale}")
    target = count_params(baseline).total_params
    best = None
    for w in w_search_range:
        try:
            variant = with_width_scale(baseline, w, scale)
        except (InvalidConfig, InvalidTemplate, ValueError):
            continue
        key = (abs(count_params(variant).total_params - target), w)
        if best is None or key < best:
            best = key
    if best is None:
        raise EmptyRange(f"no valid width in the search range for scale {scale}")
    return best[1]


DIMENSIONS = {"scale": "scale", "cardinality": "cardinality", "depth": "depth"}


def fig6_base(width: int = 24, classes: int = 100) -> NetworkSpec:
    """The 29-depth, 6-cardinality, 1-scale CIFAR base used for dimension sweeps."""
    return make_spec("res2next29", cardinality=6, width=width, scale=1, classes=classes)


def sweep_dimension(base: NetworkSpec, dimension: str, values: Sequence[int]) -> list[tuple[int, int]]:
    """``(value, total params)`` for ``base`` re-built with one dimension changed."""
    if dimension not in DIMENSIONS:
        raise InvalidDimension(f"dimension must be one of {sorted(DIMENSIONS)}, got {dimension!r}")
    args = base.template_args
    template = args.pop("template", None)
    if template not in ("res2next29", "resnext29"):
        raise InvalidTemplate("dimension sweeps need a res2next29-family base network")
    args.pop("se", None)
    series = []
    for v in values:
        kw = dict(args, **{DIMENSIONS[dimension]: int(v)})
        spec = make_spec("res2next29", se=bool(base.template_args.get("se")),
                         classes=base.num_classes, **kw)
        series.append((int(v), count_params(spec).total_params))
    return series


# ---------------------------------------------------------------------------
# receptive fields
# ---------------------------------------------------------------------------

@dataclass
class ReceptiveFieldProfile:
    scale: int
    theoretical: list[int]
    # (top, left, bottom, right) inclusive, per split; None until measured
    measured: list[tuple[int, int, int, int]] | None = None
    center: int | None = None

    @property
    def sizes(self) -> set[int]:
        return set(self.theoretical)

    def theoretical_box(self, i: int) -> tuple[int, int, int, int]:
        r = self.theoretical[i] // 2
        c = self.center
        return (c - r, c - r, c + r, c + r)

    def measured_sides(self) -> list[tuple[int, int]]:
        return [(b[2] - b[0] + 1, b[3] - b[1] + 1) for b in self.measured or []]

    def matches(self) -> bool:
        if self.measured is None:
            return False
        return all(box == self.theoretical_box(i) for i, box in enumerate(self.measured))

    def to_table(self) -> str:
        lines = ["split  theory  measured"]
        for i, side in enumerate(self.theoretical):
            meas = "-"
            if self.measured is not None:
                hs, ws = self.measured_sides()[i]
                meas = f"{hs}x{ws}"
            lines.append(f"{i + 1:>5}  {side}x{side:<4} {meas}")
        return "\n".join(lines) + "\n"


def enumerate_receptive_fields(cfg: Res2NetBlockConfig) -> ReceptiveFieldProfile:
    """Side length of each split's receptive field inside a stride-1 block."""
    if cfg.stride != 1:
        raise InvalidConfig("receptive-field enumeration covers stride-1 blocks only")
    if cfg.scale == 1:
        return ReceptiveFieldProfile(1, [3])
    return ReceptiveFieldProfile(cfg.scale, [1] + [2 * (i - 1) + 1 for i in range(2, cfg.scale + 1)])


def positive_block_params(cfg: Res2NetBlockConfig, seed: int = 0) -> dict[str, np.ndarray]:
    """Block parameters meeting the oracle's precondition: positive convs, identity BN."""
    rng = np.random.default_rng(seed)
    params = init_block_params(cfg, rng)
    for k, v in params.items():
        if k.endswith(".weight"):
            params[k] = rng.uniform(0.1, 1.0, v.shape).astype(np.float32)
    return params


def _check_oracle_params(cfg, params):
    if cfg.use_se:
        raise PreconditionViolation("receptive-field oracle requires SE off")
    for k, v in params.items():
        if k.endswith(".weight") and ("conv" in k) and np.any(v <= 0):
            raise PreconditionViolation(f"{k} has non-positive weights")
        if k.endswith(".gamma") and np.any(v != 1) or k.endswith(".beta") and np.any(v != 0) \
                or k.endswith(".running_mean") and np.any(v != 0) \
                or k.endswith(".running_var") and np.any(v != 1):
            raise PreconditionViolation(f"{k} is not an identity batch norm")


def rf_oracle(cfg: Res2NetBlockConfig, params: dict[str, np.ndarray],
              size: int | None = None, seed: int = 0) -> ReceptiveFieldProfile:
    """Measure each split's receptive field as the gradient support of one output.

    A positive input is pushed through the block (eval-mode BN, float64);
    backward from channel 0 of the centre pixel of every pre-concat output
    ``y_i`` marks exactly the input pixels that can influence it.
    """
    profile = enumerate_receptive_fields(cfg)
    _check_oracle_params(cfg, params)
    size = size or 2 * max(profile.theoretical) + 1
    center = size // 2
    x = np.random.default_rng(seed).uniform(0.5, 1.5, (1, cfg.in_channels, size, size))
    measured = []
    for i in range(len(profile.theoretical)):
        tape = Tape()
        xv = tape.leaf(x, "x")
        taps: dict = {}
        block_forward(xv, cfg, Bound(tape, params, np.float64), training=False, taps=taps)
        y = taps[f"y{i + 1}"]
        pick = np.zeros(y.shape)
        pick[0, 0, center, center] = 1.0
        g = tape.backward(ops.weighted_sum(y, pick))[xv]
        rows, cols = np.nonzero(np.abs(g[0]).sum(axis=0))
        if rows.size == 0:
            raise PreconditionViolation("gradient support is empty; inputs or weights not positive")
        measured.append((int(rows.min()), int(cols.min()), int(rows.max()), int(cols.max())))
    profile.measured = measured
    profile.center = center
    return profile
