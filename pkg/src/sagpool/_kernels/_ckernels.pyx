# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled sparse and segment kernels."""
import numpy as np
from libc.stdint cimport int64_t


def csr_spmm(const int64_t[::1] indptr, const int64_t[::1] indices,
             const double[::1] data, const double[:, ::1] dense):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t ncol = dense.shape[1]
    out_arr = np.zeros((n, ncol), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, p, c
    cdef int64_t j
    cdef double v
    with nogil:
        for i in range(n):
            for p in range(indptr[i], indptr[i + 1]):
                j = indices[p]
                v = data[p]
                for c in range(ncol):
                    out[i, c] += v * dense[j, c]
    return out_arr


def segment_sum(const double[:, ::1] values, const int64_t[::1] offsets):
    cdef Py_ssize_t nseg = offsets.shape[0] - 1
    cdef Py_ssize_t ncol = values.shape[1]
    out_arr = np.zeros((nseg, ncol), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t s, r, c
    with nogil:
        for s in range(nseg):
            for r in range(offsets[s], offsets[s + 1]):
                for c in range(ncol):
                    out[s, c] += values[r, c]
    return out_arr


def segment_max(const double[:, ::1] values, const int64_t[::1] offsets):
    cdef Py_ssize_t nseg = offsets.shape[0] - 1
    cdef Py_ssize_t ncol = values.shape[1]
    out_arr = np.empty((nseg, ncol), dtype=np.float64)
    arg_arr = np.empty((nseg, ncol), dtype=np.int64)
    cdef double[:, ::1] out = out_arr
    cdef int64_t[:, ::1] arg = arg_arr
    cdef Py_ssize_t s, r, c, start
    with nogil:
        for s in range(nseg):
            start = offsets[s]
            for c in range(ncol):
                out[s, c] = values[start, c]
                arg[s, c] = start
            for r in range(start + 1, offsets[s + 1]):
                for c in range(ncol):
                    # strict comparison keeps the lowest row on ties
                    if values[r, c] > out[s, c]:
                        out[s, c] = values[r, c]
                        arg[s, c] = r
    return out_arr, arg_arr


def csr_induced(const int64_t[::1] indptr, const int64_t[::1] indices,
                const double[::1] data, const int64_t[::1] idx):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t m = idx.shape[0]
    remap_arr = np.full(n, -1, dtype=np.int64)
    cdef int64_t[::1] remap = remap_arr
    cdef Py_ssize_t a, p, q, cnt, start
    cdef int64_t src, col, tmpc
    cdef double tmpv
    for a in range(m):
        remap[idx[a]] = a
    cnt = 0
    for a in range(m):
        src = idx[a]
        for p in range(indptr[src], indptr[src + 1]):
            if remap[indices[p]] >= 0:
                cnt += 1
    new_indptr_arr = np.zeros(m + 1, dtype=np.int64)
    cols_arr = np.empty(cnt, dtype=np.int64)
    vals_arr = np.empty(cnt, dtype=np.float64)
    cdef int64_t[::1] new_indptr = new_indptr_arr
    cdef int64_t[::1] cols = cols_arr
    cdef double[::1] vals = vals_arr
    cnt = 0
    with nogil:
        for a in range(m):
            src = idx[a]
            start = cnt
            for p in range(indptr[src], indptr[src + 1]):
                col = remap[indices[p]]
                if col >= 0:
                    # insertion sort keeps each output row ordered by column
                    q = cnt
                    tmpv = data[p]
                    while q > start and cols[q - 1] > col:
                        cols[q] = cols[q - 1]
                        vals[q] = vals[q - 1]
                        q -= 1
                    cols[q] = col
                    vals[q] = tmpv
                    cnt += 1
            new_indptr[a + 1] = cnt
    return new_indptr_arr, cols_arr, vals_arr
