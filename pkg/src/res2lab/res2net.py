"""Res2Net blocks, the baseline bottleneck, and network templates.

A Res2Net block replaces the bottleneck's single 3x3 convolution with
``scale`` narrower 3x3 convolutions connected in a chain: after the 1x1
reduction the features are split into ``x_1 .. x_s`` and

    y_1 = x_1
    y_2 = K_2(x_2)
    y_i = K_i(x_i + y_{i-1})      for 2 < i <= s

with each ``K_i`` a (grouped) 3x3 conv + BN + ReLU. The ``y_i`` are
concatenated and fused by a 1x1 convolution before the residual add.

Parameters live in a flat ``dict[str, np.ndarray]`` keyed by dotted names
(``stage2.block0.convs.3.weight``); batch-norm running statistics share the
dict under ``*.running_mean`` / ``*.running_var`` and are never trained.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Iterator

import numpy as np

from . import tensor as T
from .autodiff import Tape, Var, ops
from .errors import InvalidConfig, InvalidTemplate, NonDivisibleChannels, ShapeMismatch

STRIDE_MODES = ("parallel", "prepool")
BUFFER_SUFFIXES = (".running_mean", ".running_var")


@dataclass(frozen=True)
class Res2NetBlockConfig:
    """Shape of one block. ``width`` is channels per split; ``n = scale * width``.

    ``stride_mode`` picks how a stride-2 block is built: ``"parallel"`` puts
    the stride on every K_i and drops the chained add (x_1 is 3x3/2
    average-pooled), ``"prepool"`` average-pools before the split and keeps
    the chain at stride 1.
    """

    in_channels: int
    out_channels: int
    width: int
    scale: int = 4
    cardinality: int = 1
    stride: int = 1
    use_se: bool = False
    se_ratio: int = 16
    stride_mode: str = "parallel"

    def __post_init__(self):
        for name in ("in_channels", "out_channels", "width", "scale", "cardinality", "se_ratio"):
            if getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.stride not in (1, 2):
            raise InvalidConfig(f"stride must be 1 or 2, got {self.stride}")
        if self.width % self.cardinality:
            raise NonDivisibleChannels(
                f"width {self.width} is not divisible by cardinality {self.cardinality}")
        if self.stride_mode not in STRIDE_MODES:
            raise InvalidConfig(f"stride_mode must be one of {STRIDE_MODES}")

    @classmethod
    def from_internal(cls, in_channels, out_channels, internal, scale, **kw):
        if internal % scale:
            raise NonDivisibleChannels(f"internal width {internal} is not {scale} equal splits")
        return cls(in_channels, out_channels, internal // scale, scale, **kw)

    @property
    def internal_channels(self) -> int:
        return self.width * self.scale

    @property
    def se_hidden(self) -> int:
        return max(1, self.out_channels // self.se_ratio)

    @property
    def has_projection(self) -> bool:
        return self.in_channels != self.out_channels or self.stride != 1

    @property
    def n_kernels(self) -> int:
        return 1 if self.scale == 1 else self.scale - 1


# ---------------------------------------------------------------------------
# parameter initialisation
# ---------------------------------------------------------------------------

def _conv_weight(rng, c_out, c_in_per_group, k):
    std = np.sqrt(2.0 / (c_out * k * k))
    return (rng.standard_normal((c_out, c_in_per_group, k, k)) * std).astype(np.float32)


def _add_conv(params, rng, name, c_in, c_out, k, groups=1):
    params[f"{name}.weight"] = _conv_weight(rng, c_out, c_in // groups, k)


def _add_bn(params, name, c):
    params[f"{name}.gamma"] = np.ones(c, np.float32)
    params[f"{name}.beta"] = np.zeros(c, np.float32)
    params[f"{name}.running_mean"] = np.zeros(c, np.float32)
    params[f"{name}.running_var"] = np.ones(c, np.float32)


def _add_fc(params, rng, name, c_in, c_out):
    params[f"{name}.weight"] = (rng.standard_normal((c_out, c_in)) * np.sqrt(2.0 / c_out)).astype(np.float32)
    params[f"{name}.bias"] = np.zeros(c_out, np.float32)


def _add_tail(params, rng, cfg, prefix):
    n = cfg.internal_channels
    _add_conv(params, rng, f"{prefix}conv3", n, cfg.out_channels, 1)
    _add_bn(params, f"{prefix}bn3", cfg.out_channels)
    if cfg.use_se:
        _add_fc(params, rng, f"{prefix}se.fc1", cfg.out_channels, cfg.se_hidden)
        _add_fc(params, rng, f"{prefix}se.fc2", cfg.se_hidden, cfg.out_channels)
    if cfg.has_projection:
        _add_conv(params, rng, f"{prefix}shortcut.conv", cfg.in_channels, cfg.out_channels, 1)
        _add_bn(params, f"{prefix}shortcut.bn", cfg.out_channels)


def init_block_params(cfg: Res2NetBlockConfig, rng=None, prefix: str = "") -> dict[str, np.ndarray]:
    rng = np.random.default_rng(rng)
    params: dict[str, np.ndarray] = {}
    n, w, c = cfg.internal_channels, cfg.width, cfg.cardinality
    _add_conv(params, rng, f"{prefix}conv1", cfg.in_channels, n, 1)
    _add_bn(params, f"{prefix}bn1", n)
    for i in kernel_indices(cfg):
        _add_conv(params, rng, f"{prefix}convs.{i}", w, w, 3, groups=c)
        _add_bn(params, f"{prefix}bns.{i}", w)
    _add_tail(params, rng, cfg, prefix)
    return params


def init_bottleneck_params(cfg: Res2NetBlockConfig, rng=None, prefix: str = "") -> dict[str, np.ndarray]:
    """Bottleneck parameters; its single 3x3 conv spans all ``n`` internal channels."""
    rng = np.random.default_rng(rng)
    params: dict[str, np.ndarray] = {}
    n = cfg.internal_channels
    _add_conv(params, rng, f"{prefix}conv1", cfg.in_channels, n, 1)
    _add_bn(params, f"{prefix}bn1", n)
    _add_conv(params, rng, f"{prefix}conv2", n, n, 3, groups=cfg.cardinality)
    _add_bn(params, f"{prefix}bn2", n)
    _add_tail(params, rng, cfg, prefix)
    return params


def kernel_indices(cfg: Res2NetBlockConfig) -> list[int]:
    """1-based split indices that own a 3x3 conv (split 1 is passed through)."""
    return [1] if cfg.scale == 1 else list(range(2, cfg.scale + 1))


def is_buffer(name: str) -> bool:
    return name.endswith(BUFFER_SUFFIXES)


# ---------------------------------------------------------------------------
# forward passes on a tape
# ---------------------------------------------------------------------------

class Bound:
    """Parameters bound to a tape: trainable entries become leaves on first use."""

    def __init__(self, tape: Tape, params: dict[str, np.ndarray], dtype=None):
        self.tape = tape
        self.params = params
        self.dtype = dtype
        self.leaves: dict[str, Var] = {}

    def __getitem__(self, name: str) -> Var:
        leaf = self.leaves.get(name)
        if leaf is None:
            try:
                value = self.params[name]
            except KeyError:
                raise ShapeMismatch(f"missing parameter {name!r}") from None
            if self.dtype is not None:
                value = value.astype(self.dtype, copy=False)
            leaf = self.leaves[name] = self.tape.leaf(value, name)
        return leaf

    def array(self, name: str) -> np.ndarray:
        try:
            value = self.params[name]
        except KeyError:
            raise ShapeMismatch(f"missing parameter {name!r}") from None
        return value if self.dtype is None else value.astype(self.dtype, copy=False)


def _conv(b: Bound, name, x, stride=1, padding=0, groups=1):
    return ops.conv2d(x, b[f"{name}.weight"], stride, padding, groups)


def _bn(b: Bound, name, x, training):
    return ops.batch_norm(x, b[f"{name}.gamma"], b[f"{name}.beta"],
                          b.array(f"{name}.running_mean"), b.array(f"{name}.running_var"),
                          training, name=name)


def _check_block_input(x: Var, cfg: Res2NetBlockConfig):
    if x.value.ndim != 4 or x.shape[1] != cfg.in_channels:
        raise ShapeMismatch(f"block expects {cfg.in_channels} input channels, got {x.shape}")


def se_forward(u: Var, b: Bound, prefix: str = "") -> Var:
    z = ops.global_avg_pool(u)
    h = ops.relu(ops.linear(z, b[f"{prefix}se.fc1.weight"], b[f"{prefix}se.fc1.bias"]))
    e = ops.sigmoid(ops.linear(h, b[f"{prefix}se.fc2.weight"], b[f"{prefix}se.fc2.bias"]))
    return ops.scale_channels(u, e)


def _block_tail(x: Var, fused: Var, cfg, b: Bound, training, prefix, taps):
    out = _bn(b, f"{prefix}bn3", _conv(b, f"{prefix}conv3", fused), training)
    if cfg.use_se:
        out = se_forward(out, b, prefix)
    if cfg.has_projection:
        short = _conv(b, f"{prefix}shortcut.conv", x, stride=cfg.stride)
        short = _bn(b, f"{prefix}shortcut.bn", short, training)
    else:
        short = x
    out = ops.relu(ops.add(out, short))
    if taps is not None:
        taps[f"{prefix}out"] = out
    return out


def block_forward(x: Var, cfg: Res2NetBlockConfig, b: Bound, training: bool = True,
                  prefix: str = "", taps: dict[str, Var] | None = None) -> Var:
    """Res2Net block on a tape; ``taps`` receives ``split{i}`` / ``y{i}`` intermediates."""
    _check_block_input(x, cfg)
    if taps is None:
        taps = {}
    out = ops.relu(_bn(b, f"{prefix}bn1", _conv(b, f"{prefix}conv1", x), training))
    strided = cfg.stride != 1
    if strided and cfg.stride_mode == "prepool":
        out = ops.avg_pool2d(out, 3, cfg.stride, 1)
    k_stride = cfg.stride if strided and cfg.stride_mode == "parallel" else 1
    chained = not (strided and cfg.stride_mode == "parallel")

    def kernel(i, v):
        v = _conv(b, f"{prefix}convs.{i}", v, k_stride, 1, cfg.cardinality)
        return ops.relu(_bn(b, f"{prefix}bns.{i}", v, training))

    if cfg.scale == 1:
        taps[f"{prefix}split1"] = out
        ys = [kernel(1, out)]
    else:
        xs = ops.split_channels(out, cfg.scale)
        ys = []
        for i, xi in enumerate(xs, start=1):
            taps[f"{prefix}split{i}"] = xi
            if i == 1:
                y = ops.avg_pool2d(xi, 3, k_stride, 1) if k_stride != 1 else xi
            elif i == 2 or not chained:
                y = kernel(i, xi)
            else:
                y = kernel(i, ops.add(xi, ys[-1]))
            ys.append(y)
    for i, y in enumerate(ys, start=1):
        taps[f"{prefix}y{i}"] = y
    fused = ops.concat_channels(ys) if len(ys) > 1 else ys[0]
    return _block_tail(x, fused, cfg, b, training, prefix, taps)


def bottleneck_block_forward(x: Var, cfg: Res2NetBlockConfig, b: Bound, training: bool = True,
                             prefix: str = "", taps: dict[str, Var] | None = None) -> Var:
    _check_block_input(x, cfg)
    out = ops.relu(_bn(b, f"{prefix}bn1", _conv(b, f"{prefix}conv1", x), training))
    out = _conv(b, f"{prefix}conv2", out, cfg.stride, 1, cfg.cardinality)
    out = ops.relu(_bn(b, f"{prefix}bn2", out, training))
    return _block_tail(x, out, cfg, b, training, prefix, taps)


def _run_block(fn, x, cfg, params, training, dtype):
    x = np.asarray(x)
    dtype = dtype or x.dtype
    tape = Tape()
    xv = tape.leaf(T.as_tensor(x, dtype), "x")
    return fn(xv, cfg, Bound(tape, params, dtype), training).value


def res2net_block_forward(x, cfg: Res2NetBlockConfig, params, training: bool = False, dtype=None):
    """Array-in, array-out Res2Net block (eval-mode BN by default)."""
    return _run_block(block_forward, x, cfg, params, training, dtype)


def bottleneck_forward(x, cfg: Res2NetBlockConfig, params, training: bool = False, dtype=None):
    return _run_block(bottleneck_block_forward, x, cfg, params, training, dtype)


def se_apply(u, se_params, ratio: int = 16, prefix: str = ""):
    """Squeeze-and-excite rescaling of ``u`` (array API)."""
    u = T.as_tensor(u, np.asarray(u).dtype)
    hidden = se_params[f"{prefix}se.fc1.weight"].shape[0]
    if hidden != max(1, u.shape[1] // ratio):
        raise ShapeMismatch(f"SE hidden width {hidden} does not match C={u.shape[1]}, r={ratio}")
    tape = Tape()
    return se_forward(tape.leaf(u, "u"), Bound(tape, se_params, u.dtype), prefix).value


# ---------------------------------------------------------------------------
# network description
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StemSpec:
    """``imagenet``: 7x7/2 conv + 3x3/2 max-pool; ``cifar``: 3x3/1 conv."""

    kind: str
    in_channels: int = 3
    out_channels: int = 64

    def __post_init__(self):
        if self.kind not in ("imagenet", "cifar"):
            raise InvalidConfig(f"unknown stem kind {self.kind!r}")


@dataclass(frozen=True)
class StageSpec:
    count: int
    in_channels: int
    out_channels: int
    width: int
    scale: int
    cardinality: int = 1
    stride: int = 1
    use_se: bool = False
    se_ratio: int = 16

    def blocks(self) -> list[Res2NetBlockConfig]:
        out = []
        for i in range(self.count):
            out.append(Res2NetBlockConfig(
                self.in_channels if i == 0 else self.out_channels, self.out_channels,
                self.width, self.scale, self.cardinality, self.stride if i == 0 else 1,
                self.use_se, self.se_ratio))
        return out


@dataclass(frozen=True)
class NetworkSpec:
    name: str
    stem: StemSpec
    stages: tuple[StageSpec, ...]
    num_classes: int
    block: str = "res2net"
    template: tuple[tuple[str, object], ...] = field(default=(), compare=False)

    def __post_init__(self):
        if self.block not in ("res2net", "bottleneck"):
            raise InvalidConfig(f"unknown block kind {self.block!r}")
        if self.num_classes < 1:
            raise InvalidConfig("num_classes must be positive")
        prev = self.stem.out_channels
        for i, st in enumerate(self.stages):
            if st.in_channels != prev:
                raise InvalidConfig(f"stage {i + 1} expects {st.in_channels} channels but receives {prev}")
            prev = st.out_channels
        for _ in self.blocks():
            pass  # validates every block config

    @property
    def feature_channels(self) -> int:
        return self.stages[-1].out_channels if self.stages else self.stem.out_channels

    @property
    def default_resolution(self) -> int:
        return 224 if self.stem.kind == "imagenet" else 32

    @property
    def template_args(self) -> dict:
        return dict(self.template)

    def blocks(self) -> Iterator[tuple[str, Res2NetBlockConfig]]:
        for si, stage in enumerate(self.stages, start=1):
            for bi, cfg in enumerate(stage.blocks()):
                yield f"stage{si}.block{bi}", cfg

    def layer_names(self) -> list[str]:
        names = ["stem"]
        for si, stage in enumerate(self.stages, start=1):
            names += [f"stage{si}.block{bi}" for bi in range(stage.count)]
            names.append(f"stage{si}")
        return names + ["pool"]

    # one line per layer: kind, channels, w, s, c, stride, se
    def to_text(self) -> str:
        t = " ".join(f"{k}={_fmt(v)}" for k, v in self.template)
        lines = [f"network name={self.name} block={self.block} classes={self.num_classes}"
                 + (f" {t}" if t else ""),
                 f"stem kind={self.stem.kind} in={self.stem.in_channels} out={self.stem.out_channels}"]
        for si, stage in enumerate(self.stages, start=1):
            for cfg in stage.blocks():
                lines.append(
                    f"block stage={si} in={cfg.in_channels} out={cfg.out_channels} w={cfg.width} "
                    f"s={cfg.scale} c={cfg.cardinality} stride={cfg.stride} se={int(cfg.use_se)} "
                    f"r={cfg.se_ratio}")
        lines.append(f"head pool=global fc={self.feature_channels}->{self.num_classes}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "NetworkSpec":
        header, stem, blocks = None, None, []
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            kind, *pairs = line.split()
            try:
                kv = dict(p.split("=", 1) for p in pairs)
            except ValueError:
                raise InvalidConfig(f"line {lineno}: expected key=value pairs: {raw!r}") from None
            if kind == "network":
                header = kv
            elif kind == "stem":
                stem = StemSpec(kv["kind"], int(kv["in"]), int(kv["out"]))
            elif kind == "block":
                blocks.append(kv)
            elif kind != "head":
                raise InvalidConfig(f"line {lineno}: unknown layer kind {kind!r}")
        if header is None or stem is None:
            raise InvalidConfig("network text needs 'network' and 'stem' lines")
        stages = []
        for key in sorted({int(b["stage"]) for b in blocks}):
            group = [b for b in blocks if int(b["stage"]) == key]
            first = group[0]
            stages.append(StageSpec(len(group), int(first["in"]), int(first["out"]), int(first["w"]),
                                    int(first["s"]), int(first["c"]), int(first["stride"]),
                                    bool(int(first["se"])), int(first.get("r", 16))))
        template = tuple((k, _parse_scalar(v)) for k, v in header.items()
                         if k not in ("name", "block", "classes"))
        return cls(header["name"], stem, tuple(stages), int(header["classes"]),
                   header.get("block", "res2net"), template)


def _fmt(v):
    return str(int(v)) if isinstance(v, bool) else str(v)


def _parse_scalar(v: str):
    return int(v) if re.fullmatch(r"-?\d+", v) else v


# ---------------------------------------------------------------------------
# templates
# ---------------------------------------------------------------------------

TEMPLATES = ("resnet50", "res2net50", "res2next29", "resnext29", "mini")


def make_spec(template: str, *, width: int | None = None, scale: int | None = None,
              cardinality: int | None = None, se: bool = False, classes: int | None = None,
              depth: int | None = None) -> NetworkSpec:
    """Network description for a named template.

    * ``resnet50`` -- bottleneck ResNet-50, stages [3, 4, 6, 3].
    * ``res2net50`` -- same layout; per-stage split width ``floor(planes * width / 64)``.
    * ``res2next29`` / ``resnext29`` -- CIFAR ResNeXt-29 layout; ``width`` is per
      cardinality group, so a split holds ``cardinality * width`` channels in stage 1
      (doubling per stage). ``depth`` = 9 * blocks_per_stage + 2.
    * ``mini`` -- small CIFAR-style net, 3 stages x 2 blocks, outputs 32/64/128.
    """
    if template == "resnet50":
        w, s, c = width or 64, scale or 1, cardinality or 1
        if s != 1:
            raise InvalidTemplate("resnet50 has scale 1; use res2net50 for s > 1")
        return _imagenet50(f"resnet50{'-se' if se else ''}", "bottleneck", w, 1, c, se,
                           classes or 1000, (("template", "resnet50"), ("se", int(se))))
    if template == "res2net50":
        w, s, c = width or 26, scale or 4, cardinality or 1
        name = f"res2net50-{w}w{s}s" + (f"-{c}c" if c > 1 else "") + ("-se" if se else "")
        return _imagenet50(name, "res2net", w, s, c, se, classes or 1000,
                           (("template", "res2net50"), ("width", w), ("scale", s),
                            ("cardinality", c), ("se", int(se))))
    if template in ("res2next29", "resnext29"):
        c, w = cardinality or (8 if template == "resnext29" else 6), width or (64 if template == "resnext29" else 24)
        s = scale or (1 if template == "resnext29" else 4)
        if template == "resnext29" and s != 1:
            raise InvalidTemplate("resnext29 has scale 1; use res2next29 for s > 1")
        d = depth or 29
        if d < 11 or (d - 2) % 9:
            raise InvalidTemplate(f"depth must be 9k+2 with k >= 1, got {d}")
        per_stage = (d - 2) // 9
        stages, prev = [], 64
        for i, out in enumerate((256, 512, 1024)):
            stages.append(StageSpec(per_stage, prev, out, c * w * 2 ** i, s, c, 1 if i == 0 else 2, se))
            prev = out
        name = f"{template}-{d}d-{c}c{w}w" + (f"{s}s" if s > 1 else "") + ("-se" if se else "")
        return NetworkSpec(name, StemSpec("cifar", 3, 64), tuple(stages), classes or 100, "res2net",
                           (("template", template), ("width", w), ("scale", s),
                            ("cardinality", c), ("se", int(se)), ("depth", d)))
    if template == "mini":
        w, s, c = width or 4, scale or 4, cardinality or 1
        stages, prev = [], 16
        for i, out in enumerate((32, 64, 128)):
            stages.append(StageSpec(2, prev, out, w * 2 ** i, s, c, 1 if i == 0 else 2, se, 8))
            prev = out
        return NetworkSpec(f"mini-{w}w{s}s" + (f"-{c}c" if c > 1 else "") + ("-se" if se else ""),
                           StemSpec("cifar", 3, 16), tuple(stages), classes or 10, "res2net",
                           (("template", "mini"), ("width", w), ("scale", s),
                            ("cardinality", c), ("se", int(se))))
    raise InvalidTemplate(f"unknown template {template!r}; expected one of {TEMPLATES}")


def _imagenet50(name, block, w, s, c, se, classes, template):
    stages, prev = [], 64
    for i, (count, planes) in enumerate(zip((3, 4, 6, 3), (64, 128, 256, 512))):
        split_width = planes * w // 64
        if split_width < 1:
            raise InvalidTemplate(f"width {w} collapses stage {i + 1} to zero channels")
        stages.append(StageSpec(count, prev, planes * 4, split_width, s, c, 1 if i == 0 else 2, se))
        prev = planes * 4
    return NetworkSpec(name, StemSpec("imagenet", 3, 64), tuple(stages), classes, block, template)


def with_width_scale(spec: NetworkSpec, width: int, scale: int) -> NetworkSpec:
    """Res2Net variant of ``spec`` whose stage-1 split width is ``width``.

    Later stages keep their width ratio to stage 1 (``floor(ratio * width)``).
    """
    base = spec.stages[0].width * spec.stages[0].scale if spec.block == "bottleneck" else spec.stages[0].width
    stages = []
    for st in spec.stages:
        own = st.width * st.scale if spec.block == "bottleneck" else st.width
        stages.append(replace(st, width=own * width // base, scale=scale))
    return replace(spec, name=f"{spec.name}@{width}w{scale}s", stages=tuple(stages), block="res2net")


# ---------------------------------------------------------------------------
# whole-network forward
# ---------------------------------------------------------------------------

def init_params(spec: NetworkSpec, seed: int = 42) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    k = 7 if spec.stem.kind == "imagenet" else 3
    _add_conv(params, rng, "stem.conv", spec.stem.in_channels, spec.stem.out_channels, k)
    _add_bn(params, "stem.bn", spec.stem.out_channels)
    init = init_bottleneck_params if spec.block == "bottleneck" else init_block_params
    for name, cfg in spec.blocks():
        params.update(init(cfg, rng, prefix=f"{name}."))
    _add_fc(params, rng, "fc", spec.feature_channels, spec.num_classes)
    return params


def build_network(template: str, class_count: int | None = None, seed: int = 42, **kw):
    """``(spec, params)`` for a template; see :func:`make_spec` for keywords."""
    spec = make_spec(template, classes=class_count, **kw)
    return spec, init_params(spec, seed)


def network_forward(spec: NetworkSpec, b: Bound, x: Var, training: bool = False,
                    taps: dict[str, Var] | None = None) -> Var:
    """Logits for a batch. ``taps`` collects every named activation in :meth:`NetworkSpec.layer_names`."""
    if taps is None:
        taps = {}
    if x.value.ndim != 4 or x.shape[1] != spec.stem.in_channels:
        raise ShapeMismatch(f"network expects {spec.stem.in_channels}-channel NCHW input, got {x.shape}")
    if spec.stem.kind == "imagenet":
        h = ops.relu(_bn(b, "stem.bn", _conv(b, "stem.conv", x, 2, 3), training))
        h = ops.max_pool2d(h, 3, 2, 1)
    else:
        h = ops.relu(_bn(b, "stem.bn", _conv(b, "stem.conv", x, 1, 1), training))
    taps["stem"] = h
    block_fn = bottleneck_block_forward if spec.block == "bottleneck" else block_forward
    for si, stage in enumerate(spec.stages, start=1):
        for bi, cfg in enumerate(stage.blocks()):
            name = f"stage{si}.block{bi}"
            h = block_fn(h, cfg, b, training, prefix=f"{name}.", taps=taps)
            taps[name] = h
        taps[f"stage{si}"] = h
    pooled = ops.global_avg_pool(h)
    taps["pool"] = pooled
    return ops.linear(pooled, b["fc.weight"], b["fc.bias"])


def predict(spec: NetworkSpec, params, images, batch_size: int = 256) -> np.ndarray:
    """Eval-mode logits as a float32 (N, classes) array."""
    images = np.asarray(images)
    out = np.zeros((images.shape[0], spec.num_classes), np.float32)
    for start in range(0, images.shape[0], batch_size):
        tape = Tape()
        chunk = T.as_tensor(images[start:start + batch_size])
        out[start:start + len(chunk)] = network_forward(spec, Bound(tape, params), tape.leaf(chunk)).value
    return out
