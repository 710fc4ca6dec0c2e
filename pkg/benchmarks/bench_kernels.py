"""Compare the numba-compiled kernels against the pure-numpy fallbacks.

Run from the repository root:

    python3 benchmarks/bench_kernels.py

Both paths are imported directly so one process can time the two
implementations side by side (the KNOBREC_NO_NUMBA env flag only selects
which one the public wrappers dispatch to).
"""

import time

import numpy as np

from knobrec import kernels


def timeit(fn, *args, repeats=20):
    fn(*args)  # warm up (numba compiles on first call)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_dcg(n_items, n_holdout, k):
    rng = np.random.default_rng(0)
    ranked = rng.permutation(n_items).astype(np.int64)
    holdout = np.sort(rng.choice(n_items, size=n_holdout, replace=False)).astype(np.int64)
    t_jit = timeit(kernels._dcg_binary_jit, ranked, holdout, k)
    t_np = timeit(kernels._dcg_binary_np, ranked, holdout, k)
    print(f"dcg_binary  items={n_items:>7} holdout={n_holdout:>5} k={k:>4}  "
          f"numba {t_jit*1e6:8.1f}us  numpy {t_np*1e6:8.1f}us  "
          f"speedup {t_np/t_jit:5.2f}x")


def bench_joint(n, n_bins):
    rng = np.random.default_rng(1)
    xb = rng.integers(0, n_bins, size=n).astype(np.int64)
    yb = rng.integers(0, n_bins, size=n).astype(np.int64)
    t_jit = timeit(kernels._joint_counts_jit, xb, yb, n_bins)
    t_np = timeit(kernels._joint_counts_np, xb, yb, n_bins)
    print(f"joint_counts n={n:>8} bins={n_bins:>3}  "
          f"numba {t_jit*1e6:8.1f}us  numpy {t_np*1e6:8.1f}us  "
          f"speedup {t_np/t_jit:5.2f}x")


def main():
    print(f"numba available: {kernels.USING_NUMBA}")
    for n_items, n_holdout, k in [(1_000, 50, 100), (20_000, 500, 100),
                                  (200_000, 5_000, 100)]:
        bench_dcg(n_items, n_holdout, k)
    for n, n_bins in [(10_000, 20), (100_000, 20), (1_000_000, 20)]:
        bench_joint(n, n_bins)


if __name__ == "__main__":
    main()
