# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled nearest-neighbour kernels; same contract as ``_knn_py``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()


def kneighbors(query, ref, Py_ssize_t k, skip=None):
    cdef double[:, ::1] q = np.ascontiguousarray(query, dtype=np.float64)
    cdef double[:, ::1] r = np.ascontiguousarray(ref, dtype=np.float64)
    cdef Py_ssize_t nq = q.shape[0], n = r.shape[0], dim = q.shape[1]
    if skip is None:
        skip = np.full(nq, -1, dtype=np.int64)
    cdef long long[::1] sk = np.ascontiguousarray(skip, dtype=np.int64)
    if k < 1 or (nq and k > n - (1 if (np.asarray(sk) >= 0).any() else 0)):
        raise ValueError(f"cannot take {k} neighbours from {n} reference points")
    out_arr = np.empty((nq, k), dtype=np.int64)
    cdef long long[:, ::1] out = out_arr
    cdef double[::1] best_d = np.empty(k, dtype=np.float64)
    cdef long long[::1] best_i = np.empty(k, dtype=np.int64)
    cdef Py_ssize_t i, j, t, pos, filled
    cdef double d, diff
    with nogil:
        for i in range(nq):
            filled = 0
            for j in range(n):
                if j == sk[i]:
                    continue
                d = 0.0
                for t in range(dim):
                    diff = q[i, t] - r[j, t]
                    d = d + diff * diff
                # j grows monotonically, so strict < keeps the lower index on ties
                if filled < k:
                    pos = filled
                    filled = filled + 1
                elif d < best_d[k - 1]:
                    pos = k - 1
                else:
                    continue
                while pos > 0 and d < best_d[pos - 1]:
                    best_d[pos] = best_d[pos - 1]
                    best_i[pos] = best_i[pos - 1]
                    pos = pos - 1
                best_d[pos] = d
                best_i[pos] = j
            for t in range(k):
                out[i, t] = best_i[t]
    return out_arr


def interpolate(base, partner, gaps):
    cdef double[:, ::1] b = np.ascontiguousarray(base, dtype=np.float64)
    cdef double[:, ::1] p = np.ascontiguousarray(partner, dtype=np.float64)
    cdef double[::1] g = np.ascontiguousarray(gaps, dtype=np.float64)
    cdef Py_ssize_t n = b.shape[0], dim = b.shape[1], i, t
    out_arr = np.empty((n, dim), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    with nogil:
        for i in range(n):
            for t in range(dim):
                out[i, t] = b[i, t] + g[i] * (p[i, t] - b[i, t])
    return out_arr
