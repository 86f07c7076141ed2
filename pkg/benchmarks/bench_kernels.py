#!/usr/bin/env python3
"""Benchmark the compiled kernels against the numpy fallback.

Times the three kernel primitives on lenet-mini-shaped workloads plus one
full local-training call per backend. Run:

    python benchmarks/bench_kernels.py [--repeats 5]
"""

import argparse
import time

import numpy as np

from fedmark.nn import _kernels_py

try:
    from fedmark.nn import _kernels as _kernels_cy
except ImportError:
    _kernels_cy = None


def timeit(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_kernels(repeats):
    rng = np.random.default_rng(0)
    # conv2 of lenet-mini on a 32-image batch: (32, 12, 14, 14), kernel 5
    x = rng.standard_normal((32, 12, 14, 14)).astype(np.float32)
    k, s = 5, 1
    cols = _kernels_py.im2col(x, k, s)
    pool_in = rng.standard_normal((32, 24, 10, 10)).astype(np.float32)

    rows = []
    backends = [("numpy", _kernels_py)]
    if _kernels_cy is not None:
        backends.append(("cython", _kernels_cy))
    for name, mod in backends:
        t_im2col = timeit(lambda: mod.im2col(x, k, s), repeats)
        t_col2im = timeit(lambda: mod.col2im(cols, *x.shape, k, s), repeats)

        def pool_pair():
            out, idx = mod.maxpool_forward(pool_in, 2)
            mod.maxpool_backward(out, idx, 10, 10, 2)

        t_pool = timeit(pool_pair, repeats)
        rows.append((name, t_im2col, t_col2im, t_pool))
    return rows


def bench_training(repeats):
    from fedmark.data import synth_dataset
    from fedmark.nn import engine, init_model, kernels, lenet_mini

    data = synth_dataset(10, 60, 32, 32, seed=0)
    model = init_model(lenet_mini(10), (32, 32, 1), seed=1)

    rows = []
    originals = (kernels.im2col, kernels.col2im, kernels.maxpool_forward,
                 kernels.maxpool_backward)
    backends = [("numpy", _kernels_py)]
    if _kernels_cy is not None:
        backends.append(("cython", _kernels_cy))
    try:
        for name, mod in backends:
            kernels.im2col = mod.im2col
            kernels.col2im = mod.col2im
            kernels.maxpool_forward = mod.maxpool_forward
            kernels.maxpool_backward = mod.maxpool_backward
            t = timeit(
                lambda: engine.train_local(model, data, 0.01, 1, 32, seed=2), repeats
            )
            rows.append((name, t))
    finally:
        (kernels.im2col, kernels.col2im, kernels.maxpool_forward,
         kernels.maxpool_backward) = originals
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    if _kernels_cy is None:
        print("compiled kernels unavailable; timing the numpy fallback only\n")

    kernel_rows = bench_kernels(args.repeats)
    print(f"{'backend':<8} {'im2col':>10} {'col2im':>10} {'maxpool':>10}")
    for name, a, b, c in kernel_rows:
        print(f"{name:<8} {a * 1e3:>9.2f}ms {b * 1e3:>9.2f}ms {c * 1e3:>9.2f}ms")
    if len(kernel_rows) == 2:
        (_, a0, b0, c0), (_, a1, b1, c1) = kernel_rows
        print(f"{'speedup':<8} {a0 / a1:>9.2f}x {b0 / b1:>9.2f}x {c0 / c1:>9.2f}x")

    train_rows = bench_training(args.repeats)
    print(f"\n{'backend':<8} {'train_local (1 epoch, 600 samples)':>36}")
    for name, t in train_rows:
        print(f"{name:<8} {t * 1e3:>33.1f}ms")
    if len(train_rows) == 2:
        print(f"{'speedup':<8} {train_rows[0][1] / train_rows[1][1]:>32.2f}x")


if __name__ == "__main__":
    main()
