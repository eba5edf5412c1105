"""Compare the numba and numpy kernel backends on fractional conv forward and backward.

    python3 benchmarks/bench_backends.py [--reps 30] [--shape 8,16,32,32] [--c-out 32]
"""
import argparse
import statistics
import time

import numpy as np
from threadpoolctl import threadpool_limits

from fracdil import kernels
from fracdil.fracconv import ConvParams, ScalePair, frac_conv2d, frac_conv2d_backward


def _median_ms(fn, reps, warmup=3):
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append((time.perf_counter() - t0) * 1e3)
    return statistics.median(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=30)
    ap.add_argument("--shape", default="8,16,32,32", help="N,C,H,W")
    ap.add_argument("--c-out", type=int, default=32)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    n, c, h, w = (int(v) for v in args.shape.split(","))
    rng = np.random.default_rng(args.seed)
    x = rng.standard_normal((n, c, h, w)).astype(np.float32)
    p = ConvParams(rng.standard_normal((args.c_out, c, 3, 3)).astype(np.float32) * 0.1,
                   np.zeros(args.c_out, np.float32))
    s = ScalePair(1.7, 2.9)
    gout = rng.standard_normal(frac_conv2d(x, p, s).shape).astype(np.float32)

    available = [b for b in ("numba", "numpy") if b in kernels._BACKENDS]
    results, outputs = {}, {}
    prev = kernels.backend_name()
    try:
        with threadpool_limits(limits=1):
            for name in available:
                kernels.set_backend(name)
                outputs[name] = frac_conv2d(x, p, s)
                results[name] = (_median_ms(lambda: frac_conv2d(x, p, s), args.reps),
                                 _median_ms(lambda: frac_conv2d_backward(x, p, s, gout), args.reps))
    finally:
        kernels.set_backend(prev)

    print(f"input {x.shape}, c_out {args.c_out}, scale {s.as_tuple()}, reps {args.reps}, 1 thread")
    print(f"{'backend':8s} {'forward ms':>11s} {'backward ms':>12s}")
    for name, (f, b) in results.items():
        print(f"{name:8s} {f:11.2f} {b:12.2f}")
    if len(results) == 2:
        (nf, nb), (pf, pb) = results["numba"], results["numpy"]
        diff = float(np.max(np.abs(outputs["numba"] - outputs["numpy"])))
        print(f"numpy/numba: forward x{pf / nf:.2f}, backward x{pb / nb:.2f}; max output diff {diff:.1e}")


if __name__ == "__main__":
    main()
