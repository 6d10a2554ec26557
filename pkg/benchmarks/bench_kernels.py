"""Time the compiled kernels against the numpy/Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat 3] [--arrivals 200000]
"""
import argparse
import time

import numpy as np

from impatientq import _pykernels
from impatientq.model import mmk

try:
    from impatientq import _kernels
except ImportError:  # extension not built
    _kernels = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(n_arrivals):
    rng = np.random.default_rng(1)
    t = np.cumsum(rng.exponential(1 / 20, n_arrivals))
    svc = rng.exponential(0.75, n_arrivals)
    pat = rng.exponential(1 / 1.5, n_arrivals)
    return [
        ("matrix_series lam=10", "matrix_series", (5, 10, 10, 1, 2, 2, 1, 2.0, 1e-12, 10000)),
        ("matrix_series lam=60", "matrix_series", (5, 60, 60, 1, 2, 2, 1, 2.0, 1e-12, 10000)),
        ("matrix_series_dd lam=10", "matrix_series_dd", (5, 10, 10, 1, 2, 2, 1, 2.0, 1e-12, 10000)),
        (f"fcfs_waits n={n_arrivals}", "fcfs_waits", (t, svc, pat, 5)),
    ]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--arrivals", type=int, default=200_000)
    args = ap.parse_args()
    print(f"{'kernel':32s} {'python [s]':>11s} {'cython [s]':>11s} {'speedup':>8s}")
    for label, name, fargs in cases(args.arrivals):
        tp = best_of(lambda: getattr(_pykernels, name)(*fargs), args.repeat)
        if _kernels is None:
            print(f"{label:32s} {tp:11.4f} {'n/a':>11s} {'':>8s}")
            continue
        tc = best_of(lambda: getattr(_kernels, name)(*fargs), args.repeat)
        print(f"{label:32s} {tp:11.4f} {tc:11.4f} {tp / tc:7.1f}x")


if __name__ == "__main__":
    main()
