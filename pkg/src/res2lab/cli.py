"""Command-line interface.

Exit status: 0 on success, 1 on usage errors, 2 on validation or I/O errors.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import replace

import numpy as np

from . import kernels
from .analysis import (count_macs, count_params, enumerate_receptive_fields, positive_block_params,
                       rf_oracle, solve_width_for_scale)
from .autodiff import grad_check, ops
from .errors import FormatError, Res2LabError, ValidationError
from .harness.cam import grad_cam, read_pnm
from .harness.config import load_spec
from .harness.data import Dataset, gen_synthetic_multiscale, load_cifar100, standardize
from .harness.train import TrainConfig, evaluate, train
from .harness.weights import load_weights, save_weights
from .res2net import Bound, block_forward, bottleneck_block_forward, init_block_params, init_bottleneck_params, init_params, predict

log = logging.getLogger("res2lab")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _cmd_params(args):
    report = count_params(load_spec(args.config))
    print(report.to_tsv() if args.tsv else report.to_table(), end="")
    print(f"total_params={report.total_params}")


def _cmd_flops(args):
    report = count_macs(load_spec(args.config), args.res)
    print(report.to_tsv() if args.tsv else report.to_table(), end="")
    print(f"total_flops={report.total_macs} ({report.gflops:.2f}G)")


def _cmd_solve(args):
    baseline = load_spec(args.baseline)
    w = solve_width_for_scale(baseline, args.scale, range(args.min_width, args.max_width + 1))
    print(f"w={w}")


def _first_stride1_block(spec):
    for _, cfg in spec.blocks():
        if cfg.stride == 1:
            return cfg
    raise ValidationError("network has no stride-1 block")


def _cmd_rf(args):
    spec = load_spec(args.config)
    cfg = replace(_first_stride1_block(spec), use_se=False)
    theory = enumerate_receptive_fields(cfg)
    profile = rf_oracle(cfg, positive_block_params(cfg, args.seed), seed=args.seed)
    print(f"block: in={cfg.in_channels} w={cfg.width} s={cfg.scale} c={cfg.cardinality}")
    print(profile.to_table(), end="")
    print(f"receptive field sizes: {sorted(theory.sizes)}")
    print(f"oracle matches theory: {'yes' if profile.matches() else 'NO'}")
    return 0 if profile.matches() else 2


def _cmd_gradcheck(args):
    spec = load_spec(args.config)
    _, cfg = next(iter(spec.blocks()))
    if spec.block == "bottleneck":
        params, fn = init_bottleneck_params(cfg, args.seed), bottleneck_block_forward
    else:
        params, fn = init_block_params(cfg, args.seed), block_forward
    rng = np.random.default_rng(args.seed)
    values = {k: v for k, v in params.items() if not k.endswith(("running_mean", "running_var"))}
    values = {k: v + rng.normal(0, 0.1, v.shape) if k.endswith(("gamma", "beta", "bias")) else v
              for k, v in values.items()}
    values["input"] = rng.standard_normal((args.batch, cfg.in_channels, args.size, args.size))
    buffers = {k: v for k, v in params.items() if k.endswith(("running_mean", "running_var"))}
    probe = None

    def loss(tape, leaves):
        nonlocal probe
        merged = dict(buffers)
        merged.update({k: v.value for k, v in leaves.items()})
        b = Bound(tape, merged, np.float64)
        b.leaves.update(leaves)
        out = fn(leaves["input"], cfg, b, training=True)
        if probe is None:
            probe = np.random.default_rng(args.seed + 1).standard_normal(out.shape)
        return ops.weighted_sum(out, probe)

    report = grad_check(loss, values, epsilon=args.epsilon, threshold=args.threshold, seed=args.seed)
    print(f"block: in={cfg.in_channels} out={cfg.out_channels} w={cfg.width} s={cfg.scale} "
          f"c={cfg.cardinality} se={int(cfg.use_se)}")
    print(report.summary())
    return 0 if report.passed else 2


def _load_data(args, stats=None, split="train") -> Dataset:
    if args.data == "synthetic":
        return gen_synthetic_multiscale(args.samples, args.classes, args.image_size, args.data_seed, stats=stats)
    return load_cifar100(args.data, split, args.limit, stats)


def _split_weights(blob):
    params = {k: v for k, v in blob.items() if not k.startswith("data.")}
    stats = (blob["data.mean"], blob["data.std"]) if "data.mean" in blob else None
    return params, stats


def _cmd_train(args):
    data = _load_data(args)
    spec = load_spec(args.config, classes=data.class_count)
    cfg = TrainConfig(lr0=args.lr, momentum=args.momentum, weight_decay=args.weight_decay,
                      lr_step=args.lr_step, epochs=args.epochs, batch_size=args.batch_size,
                      seed=args.seed, augment=args.augment, stop_at_accuracy=args.stop_at)
    print(f"training {spec.name} on {len(data)} samples, {spec.num_classes} classes")

    def show(e):
        print(f"epoch {e.epoch:4d}  loss {e.loss:.4f}  acc {e.accuracy:.4f}  lr {e.lr:g}", flush=True)

    params, _ = train(spec, init_params(spec, args.seed), data, cfg, on_epoch=show)
    blob = dict(params)
    blob["data.mean"], blob["data.std"] = data.mean, data.std
    save_weights(blob, args.out)
    result = evaluate(spec, params, data)
    print(f"train top1_error={result.top1_error:.4f} top5_error={result.top5_error:.4f}")
    print(f"weights written to {args.out}")


def _spec_for_weights(ref, params):
    return load_spec(ref, classes=int(params["fc.bias"].shape[0]))


def _cmd_eval(args):
    params, stats = _split_weights(load_weights(args.weights))
    data = _load_data(args, stats, args.split)
    spec = _spec_for_weights(args.config, params)
    result = evaluate(spec, params, data)
    print(f"samples={result.count} top1_error={result.top1_error:.4f} top5_error={result.top5_error:.4f}")


def _read_image(path) -> np.ndarray:
    if path.endswith(".npy"):
        img = np.load(path).astype(np.float32)
    else:
        img = read_pnm(path)
    if img.ndim == 4 and img.shape[0] == 1:
        img = img[0]
    if img.ndim != 3:
        raise ValidationError(f"image must be (C, H, W), got {img.shape}")
    if img.shape[0] == 1:
        img = np.repeat(img, 3, axis=0)
    return img


def _cmd_cam(args):
    params, stats = _split_weights(load_weights(args.weights))
    spec = _spec_for_weights(args.config, params)
    img = _read_image(args.image)
    if stats is not None:
        img = standardize(img[None], *stats)[0]
    result = grad_cam(spec, params, img, args.class_id, args.layer, out_path=args.out,
                      upsample=not args.no_upsample)
    row, col = result.peak()
    print(f"predicted={int(result.logits.argmax())} class={args.class_id} layer={args.layer}")
    print(f"heatmap {result.heatmap.shape[2]}x{result.heatmap.shape[3]} peak=({row},{col})")
    print(f"written {args.out}")


def _cmd_bench(args):
    spec = load_spec(args.config)
    params = init_params(spec, args.seed)
    x = np.random.default_rng(args.seed).standard_normal((args.batch, 3, args.res, args.res)).astype(np.float32)
    print(f"{spec.name} forward, batch {args.batch}, {args.res}x{args.res}, {args.iters} iters")
    timings = {}
    for name in kernels.available():
        with kernels.use_backend(name):
            predict(spec, params, x)  # warm-up
            t0 = time.perf_counter()
            for _ in range(args.iters):
                out = predict(spec, params, x)
            timings[name] = (time.perf_counter() - t0) / args.iters
            print(f"  {name:<7} {timings[name] * 1e3:10.2f} ms/iter  (checksum {float(out.sum()):.6g})")
    if len(timings) > 1:
        print(f"  speedup cython/python: {timings['python'] / timings['cython']:.2f}x")
    print(f"active backend: {kernels.backend_name()}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="res2lab", description="Res2Net complexity, receptive-field and training tools")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("params", help="parameter count report")
    s.add_argument("config")
    s.add_argument("--tsv", action="store_true", help="machine-readable rows")
    s.set_defaults(func=_cmd_params)

    s = sub.add_parser("flops", help="multiply-accumulate report")
    s.add_argument("config")
    s.add_argument("--res", type=int, default=224)
    s.add_argument("--tsv", action="store_true")
    s.set_defaults(func=_cmd_flops)

    s = sub.add_parser("solve", help="width that keeps parameters matched at a given scale")
    s.add_argument("--scale", type=int, required=True)
    s.add_argument("--baseline", default="resnet50")
    s.add_argument("--min-width", type=int, default=1)
    s.add_argument("--max-width", type=int, default=256)
    s.set_defaults(func=_cmd_solve)

    s = sub.add_parser("rf", help="receptive fields of the first stride-1 block")
    s.add_argument("config")
    s.add_argument("--seed", type=int, default=42)
    s.set_defaults(func=_cmd_rf)

    s = sub.add_parser("gradcheck", help="finite-difference check of the first block")
    s.add_argument("config")
    s.add_argument("--seed", type=int, default=42)
    s.add_argument("--batch", type=int, default=2)
    s.add_argument("--size", type=int, default=5)
    s.add_argument("--epsilon", type=float, default=1e-6)
    s.add_argument("--threshold", type=float, default=1e-4)
    s.set_defaults(func=_cmd_gradcheck)

    def data_args(s):
        s.add_argument("--data", required=True, help="CIFAR-100 binary file/directory, or 'synthetic'")
        s.add_argument("--limit", type=int, default=0)
        s.add_argument("--samples", type=int, default=64, help="synthetic sample count")
        s.add_argument("--classes", type=int, default=4, help="synthetic class count")
        s.add_argument("--image-size", type=int, default=16)
        s.add_argument("--data-seed", type=int, default=42)

    s = sub.add_parser("train", help="train with SGD")
    s.add_argument("config")
    data_args(s)
    s.add_argument("--out", required=True)
    s.add_argument("--epochs", type=int, default=100)
    s.add_argument("--batch-size", type=int, default=16)
    s.add_argument("--lr", type=float, default=0.1)
    s.add_argument("--lr-step", type=int, default=30)
    s.add_argument("--momentum", type=float, default=0.9)
    s.add_argument("--weight-decay", type=float, default=1e-4)
    s.add_argument("--augment", action="store_true")
    s.add_argument("--stop-at", type=float, default=None, help="stop at this running train accuracy")
    s.add_argument("--seed", type=int, default=42)
    s.set_defaults(func=_cmd_train)

    s = sub.add_parser("eval", help="top-1 / top-5 error")
    s.add_argument("config")
    s.add_argument("--weights", required=True)
    data_args(s)
    s.add_argument("--split", choices=("train", "test"), default="test")
    s.add_argument("--seed", type=int, default=42)
    s.set_defaults(func=_cmd_eval)

    s = sub.add_parser("cam", help="Grad-CAM heat map as PGM")
    s.add_argument("config")
    s.add_argument("--weights", required=True)
    s.add_argument("--image", required=True, help=".npy (C,H,W) in [0,1], or binary PGM/PPM")
    s.add_argument("--class", dest="class_id", type=int, required=True)
    s.add_argument("--layer", required=True)
    s.add_argument("--out", default="cam.pgm")
    s.add_argument("--no-upsample", action="store_true")
    s.add_argument("--seed", type=int, default=42)
    s.set_defaults(func=_cmd_cam)

    s = sub.add_parser("bench", help="forward-pass timing for each kernel backend")
    s.add_argument("config")
    s.add_argument("--res", type=int, default=224)
    s.add_argument("--iters", type=int, default=3)
    s.add_argument("--batch", type=int, default=1)
    s.add_argument("--seed", type=int, default=42)
    s.set_defaults(func=_cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args) or 0
    except (Res2LabError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
