"""Compare the compiled and pure-Python kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Times each low-level kernel on a few representative shapes, then a whole
mini-network forward pass, under every available backend.
"""
import argparse
import timeit

import numpy as np

from res2lab import _pykernels, kernels
from res2lab.res2net import build_network, predict

SHAPES = [
    # name, (N, C, H, W), k, stride, pad, groups
    ("3x3 s1 16ch", (8, 16, 16, 16), 3, 1, 1, 1),
    ("3x3 s2 32ch g2", (8, 32, 16, 16), 3, 2, 1, 2),
    ("7x7 s2 stem", (2, 3, 64, 64), 7, 2, 3, 1),
]


def _impl(name):
    if name == "python":
        return _pykernels
    from res2lab import _ckernels
    return _ckernels


def best_of(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def bench_kernels(repeat):
    rng = np.random.default_rng(0)
    backends = kernels.available()
    print(f"{'kernel':<10} {'shape':<16}" + "".join(f"{b:>12}" for b in backends) + f"{'speedup':>10}")
    for label, shape, k, stride, pad, groups in SHAPES:
        x = rng.standard_normal(shape).astype(np.float32)
        w = rng.standard_normal((shape[1], shape[1] // groups, k, k)).astype(np.float32)
        cols = _pykernels.im2col(x, k, stride, pad)
        cases = {
            "direct": lambda m: m.conv2d_direct(x, w, stride, pad, groups),
            "im2col": lambda m: m.im2col(x, k, stride, pad),
            "col2im": lambda m: m.col2im(cols, *shape, k, stride, pad),
        }
        for kname, call in cases.items():
            times = {b: best_of(lambda: call(_impl(b)), repeat) for b in backends}
            row = f"{kname:<10} {label:<16}" + "".join(f"{times[b] * 1e3:>10.2f}ms" for b in backends)
            if len(times) > 1:
                row += f"{times['python'] / times['cython']:>9.1f}x"
            print(row)


def bench_network(repeat):
    spec, params = build_network("mini", 10, seed=0)
    x = np.random.default_rng(0).standard_normal((16, 3, 32, 32)).astype(np.float32)
    print(f"\n{spec.name} forward, batch 16 at 32x32")
    for b in kernels.available():
        with kernels.use_backend(b):
            print(f"  {b:<7} {best_of(lambda: predict(spec, params, x), repeat) * 1e3:8.1f} ms")


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args()
    if "cython" not in kernels.available():
        print("compiled kernels not built; only the Python backend is timed")
    bench_kernels(args.repeat)
    bench_network(args.repeat)


if __name__ == "__main__":
    main()
