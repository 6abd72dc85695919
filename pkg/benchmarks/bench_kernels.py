"""Time the numpy and numba kernel twins on particle-sized inputs.

    python3 benchmarks/bench_kernels.py [--N 100000] [--repeat 20]

Prints one line per kernel with the best-of-``repeat`` wall time for each
backend and the speedup.  The first numba call (compilation) is excluded.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from mfsmp._kernels import numba_kernels, numpy_kernels


def cases(N: int, rng: np.random.Generator):
    x = rng.normal(size=N)
    w = rng.normal(size=N)
    rows = max(1, 2**21 // N)
    mat = rng.normal(size=(rows, N))
    targets = np.ascontiguousarray(rng.normal(size=(N, 2)))
    coef = rng.normal(size=4)
    breaks = np.cumsum(np.arange(1, 64) * np.pi)
    y_osc = rng.uniform(0.0, breaks[-1], N)
    drift, diff, dw = rng.normal(size=N), rng.normal(size=N), rng.normal(size=N) * 0.03
    return {
        "ordered_mean": lambda k: k.ordered_mean(x),
        "sq_diff_mean": lambda k: k.sq_diff_mean(x, w),
        f"row_weighted_mean[{rows}x{N}]": lambda k: k.row_weighted_mean(mat, w),
        "poly_normal_equations[deg3]": lambda k: k.poly_normal_equations(x, targets, 3),
        "poly_eval[deg3]": lambda k: k.poly_eval(x, coef),
        "osc_g": lambda k: k.osc_g(y_osc, breaks),
        "euler_step": lambda k: k.euler_step(x, drift, diff, dw, 1e-3, 10.0),
    }


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--N", type=int, default=100_000)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    if numba_kernels is None:
        raise SystemExit("numba is not importable; nothing to compare")
    table = cases(args.N, np.random.default_rng(0))
    print(f"N = {args.N}, best of {args.repeat}")
    print(f"{'kernel':40s} {'numpy [ms]':>11s} {'numba [ms]':>11s} {'speedup':>8s}")
    for name, fn in table.items():
        fn(numba_kernels)  # compile
        t_np = min(timeit.repeat(lambda: fn(numpy_kernels), number=1, repeat=args.repeat))
        t_nb = min(timeit.repeat(lambda: fn(numba_kernels), number=1, repeat=args.repeat))
        print(f"{name:40s} {1e3 * t_np:11.3f} {1e3 * t_nb:11.3f} {t_np / t_nb:8.1f}x")


if __name__ == "__main__":
    main()
