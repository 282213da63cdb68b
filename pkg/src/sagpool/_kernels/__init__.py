"""Kernel dispatch.

The compiled extension is preferred. Set ``SAGPOOL_BACKEND=python`` to force
the numpy fallback, or call :func:`set_backend` at runtime (the benchmark
does this to time both).
"""
import os

import numpy as np

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    _BACKENDS["cython"] = _ckernels

_impl = _pykernels
BACKEND = "python"


def available_backends():
    return sorted(_BACKENDS)


def set_backend(name):
    global _impl, BACKEND
    if name not in _BACKENDS:
        raise ValueError(f"kernel backend {name!r} not available; have {available_backends()}")
    _impl = _BACKENDS[name]
    BACKEND = name


_requested = os.environ.get("SAGPOOL_BACKEND", "").strip().lower()
if _requested:
    set_backend(_requested)
elif _ckernels is not None:
    set_backend("cython")


def _i64(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def csr_spmm(indptr, indices, data, dense):
    """Return ``S @ dense`` for the CSR matrix ``S``."""
    return _impl.csr_spmm(_i64(indptr), _i64(indices), _f64(data), _f64(dense))


def segment_sum(values, offsets):
    """Column sums of each contiguous row block ``values[offsets[s]:offsets[s+1]]``."""
    return _impl.segment_sum(_f64(values), _i64(offsets))


def segment_max(values, offsets):
    """Column maxima per row block plus the first row index attaining each."""
    return _impl.segment_max(_f64(values), _i64(offsets))


def csr_induced(indptr, indices, data, idx):
    """CSR of the submatrix ``S[idx][:, idx]``, columns sorted within rows."""
    return _impl.csr_induced(_i64(indptr), _i64(indices), _f64(data), _i64(idx))
