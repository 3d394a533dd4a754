"""Timing comparison of the JIT-compiled and pure-numpy kernel paths.

Run:  python3 benchmarks/bench_kernels.py  [--sizes 256,512,1024] [--repeats 5]

Both implementations are always exercised through the public dispatchers'
`impl` override, so the numbers are comparable regardless of PHOTOQC_NUMBA.
"""

import argparse
import time

import numpy as np

from photoqc import kernels


def timed(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sizes", default="256,512,1024",
                        help="comma-separated square image sizes")
    parser.add_argument("--repeats", type=int, default=5,
                        help="repetitions per measurement (best time wins)")
    args = parser.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]

    if not kernels.USE_NUMBA:
        print("note: numba unavailable or disabled; its column shows the "
              "numpy fallback twice")

    rng = np.random.default_rng(0)
    rows = []
    for size in sizes:
        gray = rng.random((size, size)) * 255.0
        color = rng.random((size // 2, size // 2, 3)) * 255.0

        # warm-up compiles the JIT specializations outside the timing loop
        kernels.lbp_code_image(gray[:64, :64], impl="numba")
        kernels.resize_bilinear(color[:32, :32], 64, 64, impl="numba")

        for name, fn in (
            ("lbp", lambda impl: kernels.lbp_code_image(gray, impl=impl)),
            ("resize", lambda impl: kernels.resize_bilinear(
                color, size, size, impl=impl)),
        ):
            jit = timed(lambda: fn("numba"), args.repeats)
            plain = timed(lambda: fn("numpy"), args.repeats)
            rows.append((name, size, jit, plain, plain / jit))

    print(f"{'kernel':<8} {'size':>6} {'numba [ms]':>12} {'numpy [ms]':>12} "
          f"{'speedup':>9}")
    for name, size, jit, plain, speedup in rows:
        print(f"{name:<8} {size:>6} {jit * 1e3:>12.2f} {plain * 1e3:>12.2f} "
              f"{speedup:>8.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
