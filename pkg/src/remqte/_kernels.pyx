# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled rejection search for Mahalanobis rerandomization.

Must stay bit-for-bit equivalent to ``remqte._fallback.rem_search``: same
partial Fisher-Yates from the identity per row, same summation order.
"""
import numpy as np

from libc.stdint cimport int64_t, uint32_t, uint64_t
from libc.stdlib cimport free, malloc


def rem_search(const double[:, ::1] w, Py_ssize_t subset, double scale,
               double threshold, const uint32_t[:, ::1] bits):
    cdef Py_ssize_t n = w.shape[0]
    cdef Py_ssize_t k = w.shape[1]
    cdef Py_ssize_t rows = bits.shape[0]
    cdef Py_ssize_t row, i, j, c, pick, tmp, idx
    cdef double ss, m = float("nan")
    if subset < 1 or subset > n or bits.shape[1] < subset:
        raise ValueError("inconsistent subset size")

    cdef int64_t* perm = <int64_t*> malloc(n * sizeof(int64_t))
    cdef double* acc = <double*> malloc(k * sizeof(double))
    if perm == NULL or acc == NULL:
        free(perm)
        free(acc)
        raise MemoryError()
    chosen = np.empty(subset, dtype=np.int64)
    cdef int64_t[::1] out = chosen
    try:
        for row in range(rows):
            for i in range(n):
                perm[i] = i
            for c in range(k):
                acc[c] = 0.0
            for j in range(subset):
                pick = j + <Py_ssize_t>((<uint64_t> bits[row, j] * <uint64_t>(n - j)) >> 32)
                tmp = perm[pick]
                perm[pick] = perm[j]
                perm[j] = tmp
                for c in range(k):
                    acc[c] += w[tmp, c]
            ss = acc[0] * acc[0]
            for c in range(1, k):
                ss += acc[c] * acc[c]
            m = scale * ss
            if m <= threshold:
                for j in range(subset):
                    out[j] = perm[j]
                return row, m, chosen
        return -1, m, chosen[:0]
    finally:
        free(perm)
        free(acc)
