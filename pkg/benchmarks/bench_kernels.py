#!/usr/bin/env python3
"""Benchmark the compiled kernel core against the pure-NumPy fallback.

Runs every kernel family at pipeline-realistic shapes and one full
extractor forward+VJP, printing per-backend timings.  The import-time
"auto" dispatch in latentmark.kernels follows what this benchmark shows:
BLAS-backed im2col wins the convolutions, the compiled loops win the
gather/scatter kernels.

Usage: python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import time

import numpy as np

from latentmark import kernels


def timeit(fn, repeat):
    fn()  # warm-up
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn()
    return (time.perf_counter() - t0) / repeat * 1e3


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()

    backends = kernels.get_backends()
    print(f"available backends: {', '.join(backends)}  (auto = {kernels.BACKEND})\n")
    rng = np.random.default_rng(0)

    conv_shapes = [
        ((128, 128, 3), (3, 3, 3, 16)),
        ((64, 64, 16), (3, 3, 16, 32)),
        ((32, 32, 32), (3, 3, 32, 128)),
    ]
    rows = []
    for xs, ks in conv_shapes:
        x = rng.standard_normal(xs)
        k = rng.standard_normal(ks)
        g = rng.standard_normal(
            ((xs[0] + 1) // 2, (xs[1] + 1) // 2, ks[3]))
        for name, mod in backends.items():
            fwd = timeit(lambda: mod.conv2d_forward(x, k, 2, 1), args.repeat)
            vjp = timeit(lambda: mod.conv2d_vjp_input(g, k, 2, 1, xs[0], xs[1]),
                         args.repeat)
            rows.append((f"conv2d {xs[2]:>3}->{ks[3]:<3}", name, fwd, vjp))

    x = rng.standard_normal((128, 128, 3))
    sy = rng.uniform(0, 127, (128, 128))
    sx = rng.uniform(0, 127, (128, 128))
    g = rng.standard_normal((128, 128, 3))
    k1 = rng.standard_normal(13)
    for name, mod in backends.items():
        rows.append(("warp 128x128", name,
                     timeit(lambda: mod.warp_forward(x, sy, sx), args.repeat),
                     timeit(lambda: mod.warp_vjp(g, sy, sx, 128, 128, 3), args.repeat)))
        rows.append(("sepcorr 13-tap", name,
                     timeit(lambda: mod.sepcorr(x, k1, 0), args.repeat),
                     timeit(lambda: mod.sepcorr_vjp(g, k1, 0), args.repeat)))

    print(f"{'kernel':<18} {'backend':<8} {'forward ms':>11} {'vjp ms':>9}")
    for kernel, name, fwd, vjp in rows:
        print(f"{kernel:<18} {name:<8} {fwd:>11.3f} {vjp:>9.3f}")

    # whole-extractor comparison under forced backends is only possible per
    # process (selection happens at import); compare what the current
    # process has
    from latentmark.features import make_convnet_extractor
    ex = make_convnet_extractor(0, 128)
    img = rng.uniform(0, 255, (128, 128, 3))
    cot = rng.standard_normal(128)

    def full():
        z, vjp = ex.forward_with_vjp(img)
        vjp(cot)

    print(f"\nextractor forward+vjp on '{kernels.BACKEND}': "
          f"{timeit(full, args.repeat):.2f} ms")
    print("rerun with LATENTMARK_KERNELS=numpy or =native to compare "
          "whole-pipeline numbers")


if __name__ == "__main__":
    main()
