"""Compare the compiled convolution kernels against the numpy fallback.

Run:  python benchmarks/bench_kernels.py [--quick]

Shapes mirror the phantom-experiment hot spots (dense block 1 at 48x48x16)
plus the full-scale first block (224x224x30, skipped with --quick).
"""

import argparse
import time

import numpy as np

from cineavd.nn import backend


def _time(fn, reps):
    fn()
    t0 = time.perf_counter()
    for _ in range(reps):
        fn()
    return (time.perf_counter() - t0) / reps


def bench_case(name, n, ci, co, h, w, d, k, reps):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((n, ci, h, w, d)).astype(np.float32)
    wt = rng.standard_normal((co, ci, k, k, k)).astype(np.float32)
    pad = k // 2
    flops = 2.0 * n * co * h * w * d * ci * k ** 3

    y, xp = backend.conv3d_forward(x, wt, 1, pad)
    gy = np.ascontiguousarray(y)

    rows = []
    for label, fn in [
        ("forward", lambda: backend.conv3d_forward(x, wt, 1, pad, xp=xp)),
        ("grad_input", lambda: backend.conv3d_grad_input(gy, wt, x.shape, 1, pad)),
        ("grad_weight", lambda: backend.conv3d_grad_weight(x, gy, k, 1, pad, xp=xp)),
    ]:
        dt = _time(fn, reps)
        rows.append((label, dt * 1e3, flops / dt / 1e9))

    print(f"\n{name}: x{tuple(x.shape)} w{tuple(wt.shape)}  [{backend.BACKEND}]")
    for label, ms, gflops in rows:
        print(f"  {label:<12} {ms:8.1f} ms   {gflops:6.1f} GFLOP/s")
    return rows


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--quick", action="store_true", help="skip the full-scale shape")
    parser.add_argument("--reps", type=int, default=5)
    args = parser.parse_args()

    print(f"active backend: {backend.BACKEND}")
    print("set CINEAVD_FORCE_NUMPY=1 and rerun to benchmark the fallback")

    bench_case("phantom dense-block 1 (3x3x3)", 2, 32, 8, 48, 48, 16, 3, args.reps)
    bench_case("phantom dense-block 1 (1x1x1)", 2, 56, 32, 48, 48, 16, 1, args.reps)
    bench_case("phantom stem", 2, 1, 16, 48, 48, 16, 3, args.reps)
    if not args.quick:
        bench_case("full-scale dense-block 1 (3x3x3)", 1, 64, 16, 224, 224, 30, 3, 1)


if __name__ == "__main__":
    main()
