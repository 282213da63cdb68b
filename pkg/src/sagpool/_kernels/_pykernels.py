"""Numpy implementations of the sparse and segment kernels.

Used when the compiled extension is missing or when ``SAGPOOL_BACKEND=python``.
Every function here has the same signature and output as its counterpart in
``_ckernels.pyx``.
"""
import numpy as np


def csr_spmm(indptr, indices, data, dense):
    n = indptr.shape[0] - 1
    out = np.zeros((n, dense.shape[1]), dtype=np.float64)
    if indices.shape[0] == 0:
        return out
    rows = np.repeat(np.arange(n), np.diff(indptr))
    np.add.at(out, rows, data[:, None] * dense[indices])
    return out


def segment_sum(values, offsets):
    return np.add.reduceat(values, offsets[:-1], axis=0)


def segment_max(values, offsets):
    out = np.maximum.reduceat(values, offsets[:-1], axis=0)
    seg = np.repeat(np.arange(offsets.shape[0] - 1), np.diff(offsets))
    rows = np.broadcast_to(np.arange(values.shape[0])[:, None], values.shape)
    # lowest row attaining the maximum
    candidates = np.where(values == out[seg], rows, values.shape[0])
    argmax = np.minimum.reduceat(candidates, offsets[:-1], axis=0).astype(np.int64)
    return out, argmax


def csr_induced(indptr, indices, data, idx):
    n = indptr.shape[0] - 1
    m = idx.shape[0]
    remap = np.full(n, -1, dtype=np.int64)
    remap[idx] = np.arange(m, dtype=np.int64)
    rows = remap[np.repeat(np.arange(n), np.diff(indptr))]
    cols = remap[indices]
    keep = (rows >= 0) & (cols >= 0)
    rows, cols, vals = rows[keep], cols[keep], data[keep]
    order = np.lexsort((cols, rows))
    rows, cols, vals = rows[order], cols[order], vals[order]
    new_indptr = np.zeros(m + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=m), out=new_indptr[1:])
    return new_indptr, cols, vals
