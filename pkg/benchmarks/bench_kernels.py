#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallback.

Covers the three hot paths: the fused photometric loss+gradient (one
optimiser epoch), pull-warping, and per-pixel decay fitting.  Run as:

    python benchmarks/bench_kernels.py [--repeats 5]
"""

import argparse
import time

import numpy as np

from flimreg.kernels import get_backend


def timeit(fn, repeats):
    fn()  # warm-up (JIT compile / cache load)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def smooth(n, seed, sigma=6.0):
    rng = np.random.default_rng(seed)
    img = rng.random((n, n))
    fy = np.fft.fftfreq(n)[:, None]
    fx = np.fft.rfftfreq(n)[None, :]
    g = np.exp(-2.0 * (np.pi * sigma * fy) ** 2) * \
        np.exp(-2.0 * (np.pi * sigma * fx) ** 2)
    img = np.fft.irfft2(np.fft.rfft2(img) * g, s=(n, n))
    img -= img.min()
    return img / img.max()


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    backends = {}
    backends["numpy"] = get_backend("numpy")
    try:
        backends["numba"] = get_backend("numba")
    except ImportError:
        print("numba unavailable; benchmarking numpy only")

    n = 256
    moving = np.ascontiguousarray(smooth(n, 1)[:, :, None])
    target = np.ascontiguousarray(smooth(n, 2)[:, :, None])
    g = np.eye(3)
    g[0, 2] = 0.02

    src = np.ascontiguousarray(np.random.default_rng(3).random((512, 512, 3)))
    mat = np.array([[0.98, 0.01, 4.0], [-0.02, 1.01, -3.0],
                    [1e-5, -1e-5, 1.0]])

    t = np.arange(32) * 0.05
    taus = 1.0 + 2.0 * smooth(64, 4)
    amps = 300.0 + 1000.0 * smooth(64, 5)
    block = np.ascontiguousarray(
        (amps[:, :, None] * np.exp(-t[None, None, :] / taus[:, :, None]))
        .transpose(1, 0, 2))

    cases = {
        "loss_grad 256^2 win200 (1 epoch)":
            lambda b: b.loss_grad(moving, target, g, 200),
        "warp_pull 512^2 rgb":
            lambda b: b.warp_pull(src, mat, 512, 512),
        "fit_plane 64x64x32":
            lambda b: b.fit_plane(block, t, 25.0, 4.18, 100, 1e-6),
    }

    width = max(len(k) for k in cases)
    header = f"{'kernel'.ljust(width)}  " + "".join(
        f"{name:>12}" for name in backends) + ("     speedup"
                                               if len(backends) == 2 else "")
    print(header)
    print("-" * len(header))
    for label, call in cases.items():
        times = {name: timeit(lambda b=mod: call(b), args.repeats)
                 for name, mod in backends.items()}
        row = f"{label.ljust(width)}  " + "".join(
            f"{times[name] * 1e3:>10.2f}ms" for name in backends)
        if len(times) == 2:
            row += f"  {times['numpy'] / times['numba']:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
