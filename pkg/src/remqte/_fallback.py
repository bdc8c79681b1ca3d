"""Pure-numpy twin of the compiled kernels in ``_kernels.pyx``.

Rows are processed together, so a batch is always scanned to the end, but the
returned row, distance and chosen units are identical to the compiled search.
"""
from __future__ import annotations

import numpy as np

_SHIFT = np.uint64(32)


def rem_search(w: np.ndarray, subset: int, scale: float, threshold: float,
               bits: np.ndarray):
    n, k = w.shape
    rows = bits.shape[0]
    if subset < 1 or subset > n or bits.shape[1] < subset:
        raise ValueError("inconsistent subset size")
    r = np.arange(rows)
    perm = np.broadcast_to(np.arange(n, dtype=np.int64), (rows, n)).copy()
    acc = np.zeros((rows, k))
    for j in range(subset):
        pick = j + ((bits[:, j].astype(np.uint64) * np.uint64(n - j)) >> _SHIFT).astype(np.intp)
        took = perm[r, pick]
        perm[r, pick] = perm[:, j]
        perm[:, j] = took
        acc += w[took]
    ss = acc[:, 0] * acc[:, 0]
    for c in range(1, k):
        ss += acc[:, c] * acc[:, c]
    m = scale * ss
    hits = np.flatnonzero(m <= threshold)
    if hits.size == 0:
        return -1, float(m[-1]) if rows else float("nan"), np.empty(0, dtype=np.int64)
    row = int(hits[0])
    return row, float(m[row]), perm[row, :subset].copy()
