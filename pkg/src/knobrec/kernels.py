"""Hot numeric kernels, numba-compiled with a pure-numpy fallback.

Set KNOBREC_NO_NUMBA=1 to force the numpy path (the flag is read at import
time). `benchmarks/bench_kernels.py` compares the two.
"""

from __future__ import annotations

import os

import numpy as np

_numba_disabled = os.environ.get("KNOBREC_NO_NUMBA", "0") not in ("", "0")

if not _numba_disabled:
    try:
        from numba import njit
        USING_NUMBA = True
    except ImportError:  # pragma: no cover
        USING_NUMBA = False
else:
    USING_NUMBA = False

if not USING_NUMBA:
    def njit(*args, **kwargs):
        def wrap(fn):
            return fn
        if args and callable(args[0]):
            return args[0]
        return wrap


@njit(cache=True)
def _dcg_binary_jit(ranked, holdout_sorted, k):
    dcg = 0.0
    n = min(k, ranked.shape[0])
    for pos in range(n):
        item = ranked[pos]
        # binary search in the sorted holdout
        lo, hi = 0, holdout_sorted.shape[0]
        while lo < hi:
            mid = (lo + hi) // 2
            if holdout_sorted[mid] < item:
                lo = mid + 1
            else:
                hi = mid
        if lo < holdout_sorted.shape[0] and holdout_sorted[lo] == item:
            dcg += 1.0 / np.log2(pos + 2.0)
    return dcg


def _dcg_binary_np(ranked, holdout_sorted, k):
    if holdout_sorted.shape[0] == 0:
        return 0.0
    top = ranked[:k]
    pos = np.searchsorted(holdout_sorted, top)
    hit = (pos < holdout_sorted.shape[0]) & (holdout_sorted[np.minimum(pos, holdout_sorted.shape[0] - 1)] == top)
    ranks = np.nonzero(hit)[0]
    return float(np.sum(1.0 / np.log2(ranks + 2.0)))


@njit(cache=True)
def _joint_counts_jit(xb, yb, n_bins):
    counts = np.zeros((n_bins, n_bins), dtype=np.float64)
    for i in range(xb.shape[0]):
        counts[xb[i], yb[i]] += 1.0
    return counts


def _joint_counts_np(xb, yb, n_bins):
    flat = np.bincount(xb * n_bins + yb, minlength=n_bins * n_bins)
    return flat.reshape(n_bins, n_bins).astype(np.float64)


def dcg_binary(ranked: np.ndarray, holdout_sorted: np.ndarray, k: int) -> float:
    """Binary-relevance DCG of the top-k of `ranked` against a sorted holdout."""
    ranked = np.ascontiguousarray(ranked, dtype=np.int64)
    holdout_sorted = np.ascontiguousarray(holdout_sorted, dtype=np.int64)
    if USING_NUMBA:
        return float(_dcg_binary_jit(ranked, holdout_sorted, k))
    return _dcg_binary_np(ranked, holdout_sorted, k)


def joint_counts(x_bins: np.ndarray, y_bins: np.ndarray, n_bins: int) -> np.ndarray:
    """Contingency table of two equally-binned integer sequences."""
    x_bins = np.ascontiguousarray(x_bins, dtype=np.int64)
    y_bins = np.ascontiguousarray(y_bins, dtype=np.int64)
    if USING_NUMBA:
        return _joint_counts_jit(x_bins, y_bins, n_bins)
    return _joint_counts_np(x_bins, y_bins, n_bins)
