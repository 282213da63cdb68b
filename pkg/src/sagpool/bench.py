"""Timing of sparse vs dense pooling forward passes, and of the kernel backends."""
from __future__ import annotations

import csv
import gc
import time
from dataclasses import dataclass

import numpy as np

from . import _kernels
from . import autograd as ag
from .datasets import sparse_random_graph
from .graph import SparseGraph, make_batch
from .layers import SagPoolLayer, pool

DEFAULT_SIZES = tuple(256 * 2 ** i for i in range(6))


@dataclass
class BenchRow:
    n: int
    e: int
    sparse_ns: int
    dense_ns: int
    param_count: int


def best_of(fn, repeats: int) -> int:
    best = None
    for _ in range(repeats):
        t0 = time.perf_counter_ns()
        fn()
        dt = time.perf_counter_ns() - t0
        best = dt if best is None else min(best, dt)
    return best


def sparse_pool_forward(layer: SagPoolLayer, g: SparseGraph):
    batch = make_batch([g])
    with ag.no_grad():
        return pool(layer, batch.graph.adjacency, ag.Tensor(batch.graph.features), batch.indicator, 1)


def dense_pool_forward(a: np.ndarray, x: np.ndarray, theta: np.ndarray, ratio: float):
    """The same pooling step on a dense ``N x N`` adjacency."""
    n = a.shape[0]
    a_tilde = a + np.eye(n)
    inv_sqrt = 1.0 / np.sqrt(a_tilde.sum(axis=1))
    a_hat = inv_sqrt[:, None] * a_tilde * inv_sqrt[None, :]
    z = np.tanh(a_hat @ (x @ theta))
    k = int(np.ceil(round(ratio * n, 9)))
    idx = np.lexsort((np.arange(n), -z[:, 0]))[:k]
    return x[idx] * z[idx], a[np.ix_(idx, idx)]


def min_time_ns(fn, repeats: int, budget_s: float = 0.25) -> int:
    """Fastest single call after one warm-up, garbage collector paused.

    Takes at least ``repeats`` samples and keeps sampling cheap calls until
    ``budget_s`` is spent, so small inputs get as many samples as large ones
    get time.
    """
    enabled = gc.isenabled()
    gc.disable()
    try:
        fn()
        best, spent, count = None, 0, 0
        while count < repeats or spent < budget_s * 1e9:
            t0 = time.perf_counter_ns()
            fn()
            dt = time.perf_counter_ns() - t0
            best = dt if best is None else min(best, dt)
            spent += dt
            count += 1
            if count >= 1000:
                break
        return best
    finally:
        if enabled:
            gc.enable()


def complexity_sweep(sizes=DEFAULT_SIZES, avg_degree: float = 4.0, num_features: int = 64, ratio: float = 0.5,
                     repeats: int = 5, seed: int = 0, dense: bool = True) -> list[BenchRow]:
    rng = np.random.default_rng(seed)
    layer = SagPoolLayer(num_features, ratio, rng=np.random.default_rng(seed))
    theta = layer.convs[0].weight.value
    params = sum(t.value.size for _, t in layer.parameters())
    graphs = [sparse_random_graph(n, avg_degree, rng, num_features) for n in sizes]
    rows = []
    for g in graphs:
        sparse_ns = min_time_ns(lambda: sparse_pool_forward(layer, g), repeats)
        dense_ns = 0
        if dense:
            a = g.adjacency.to_dense()
            dense_ns = best_of(lambda: dense_pool_forward(a, g.features, theta, ratio), max(1, min(repeats, 3)))
            del a
        rows.append(BenchRow(g.num_nodes, g.num_edges, sparse_ns, dense_ns, params))
    return rows


def loglog_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


def write_csv(path, rows: list[BenchRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["N", "E", "sparse_ns", "dense_ns", "param_count"])
        for r in rows:
            w.writerow([r.n, r.e, r.sparse_ns, r.dense_ns, r.param_count])


def backend_comparison(n: int = 4096, avg_degree: float = 4.0, num_features: int = 64, repeats: int = 5,
                       seed: int = 0) -> dict[str, dict[str, float]]:
    """Best-of-``repeats`` seconds per kernel for every available backend."""
    rng = np.random.default_rng(seed)
    g = sparse_random_graph(n, avg_degree, rng, num_features)
    adj = g.adjacency
    x = g.features
    offsets = np.linspace(0, n, 33).astype(np.int64)
    idx = rng.permutation(n)[: n // 2]
    layer = SagPoolLayer(num_features, 0.5, rng=np.random.default_rng(seed))
    original = _kernels.BACKEND
    out = {}
    try:
        for name in _kernels.available_backends():
            _kernels.set_backend(name)
            out[name] = {
                "csr_spmm": best_of(lambda: _kernels.csr_spmm(adj.indptr, adj.indices, adj.data, x), repeats) / 1e9,
                "segment_sum": best_of(lambda: _kernels.segment_sum(x, offsets), repeats) / 1e9,
                "segment_max": best_of(lambda: _kernels.segment_max(x, offsets), repeats) / 1e9,
                "csr_induced": best_of(lambda: _kernels.csr_induced(adj.indptr, adj.indices, adj.data, idx), repeats) / 1e9,
                "pool_forward": best_of(lambda: sparse_pool_forward(layer, g), repeats) / 1e9,
            }
    finally:
        _kernels.set_backend(original)
    return out
