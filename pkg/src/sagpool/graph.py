"""Sparse graph containers, adjacency normalization and batching.

Adjacency matrices are stored in canonical CSR form: int64 row offsets,
int64 column indices sorted within each row, float64 values, no duplicate
entries. Graphs never store self-loops; they are added by
:func:`normalize_adjacency` only.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels


class GraphError(ValueError):
    """Malformed graph data."""


class InvalidSelectionError(GraphError):
    """Duplicate or out-of-range node index passed to a subgraph operation."""


class BatchError(GraphError):
    """Graphs cannot be merged into one batch."""


@dataclass(frozen=True, eq=False)
class CSR:
    """Square sparse matrix in compressed sparse row layout."""

    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    n: int

    def __post_init__(self):
        object.__setattr__(self, "indptr", np.ascontiguousarray(self.indptr, dtype=np.int64))
        object.__setattr__(self, "indices", np.ascontiguousarray(self.indices, dtype=np.int64))
        object.__setattr__(self, "data", np.ascontiguousarray(self.data, dtype=np.float64))
        object.__setattr__(self, "n", int(self.n))
        if self.indptr.shape != (self.n + 1,):
            raise GraphError(f"row offsets must have length {self.n + 1}, got {self.indptr.shape[0]}")
        if self.indptr[0] != 0 or self.indptr[-1] != self.indices.shape[0]:
            raise GraphError("row offsets do not span the column index array")
        if np.any(np.diff(self.indptr) < 0):
            raise GraphError("row offsets must be non-decreasing")
        if self.indices.shape != self.data.shape:
            raise GraphError("column indices and values differ in length")
        if self.indices.size and (self.indices.min() < 0 or self.indices.max() >= self.n):
            raise GraphError(f"column index outside [0, {self.n})")
        for a in (self.indptr, self.indices, self.data):
            a.setflags(write=False)

    @classmethod
    def trusted(cls, indptr, indices, data, n):
        """Wrap arrays already known to be canonical (kernel outputs); skips validation."""
        obj = object.__new__(cls)
        for name, value in (("indptr", indptr), ("indices", indices), ("data", data)):
            value.setflags(write=False)
            object.__setattr__(obj, name, value)
        object.__setattr__(obj, "n", int(n))
        return obj

    @classmethod
    def from_coo(cls, n: int, rows, cols, vals=None, reduce: str = "sum") -> "CSR":
        """Build a canonical CSR, merging repeated (row, col) pairs with ``reduce``."""
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        vals = np.ones(rows.shape[0]) if vals is None else np.asarray(vals, dtype=np.float64).ravel()
        if not rows.shape == cols.shape == vals.shape:
            raise GraphError("rows, cols and values must have equal length")
        if rows.size and (min(rows.min(), cols.min()) < 0 or max(rows.max(), cols.max()) >= n):
            raise GraphError(f"edge endpoint outside [0, {n})")
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        if rows.size:
            first = np.ones(rows.shape[0], dtype=bool)
            first[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
            starts = np.flatnonzero(first)
            if reduce == "sum":
                vals = np.add.reduceat(vals, starts)
            elif reduce == "max":
                vals = np.maximum.reduceat(vals, starts)
            else:
                raise ValueError(f"unknown reduce {reduce!r}")
            rows, cols = rows[starts], cols[starts]
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
        return cls(indptr, cols, vals, n)

    @classmethod
    def from_dense(cls, a) -> "CSR":
        a = np.asarray(a, dtype=np.float64)
        rows, cols = np.nonzero(a)
        return cls.from_coo(a.shape[0], rows, cols, a[rows, cols])

    @classmethod
    def empty(cls, n: int) -> "CSR":
        return cls(np.zeros(n + 1, dtype=np.int64), np.zeros(0, np.int64), np.zeros(0), n)

    @property
    def nnz(self) -> int:
        return int(self.indices.shape[0])

    def row_ids(self) -> np.ndarray:
        return np.repeat(np.arange(self.n, dtype=np.int64), np.diff(self.indptr))

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n, self.n))
        out[self.row_ids(), self.indices] = self.data
        return out

    def transpose(self) -> "CSR":
        return CSR.from_coo(self.n, self.indices, self.row_ids(), self.data)

    def is_symmetric(self) -> bool:
        t = self.transpose()
        return (
            np.array_equal(t.indptr, self.indptr)
            and np.array_equal(t.indices, self.indices)
            and np.array_equal(t.data, self.data)
        )

    def has_diagonal(self) -> bool:
        return bool(np.any(self.row_ids() == self.indices))

    def equals(self, other: "CSR") -> bool:
        return (
            self.n == other.n
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.data, other.data)
        )

    def matmul(self, dense: np.ndarray) -> np.ndarray:
        return _kernels.csr_spmm(self.indptr, self.indices, self.data, dense)


class NormalizedAdjacency(CSR):
    """``D^-1/2 (A + I) D^-1/2`` for a stored graph ``A``. Symmetric by construction."""


@dataclass(frozen=True, eq=False)
class SparseGraph:
    """One undirected graph: adjacency, node features and an optional class label."""

    adjacency: CSR
    features: np.ndarray
    label: int | None = None

    def __post_init__(self):
        x = np.ascontiguousarray(self.features, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] != self.adjacency.n:
            raise GraphError(f"feature matrix must be {self.adjacency.n}xF, got {x.shape}")
        x.setflags(write=False)
        object.__setattr__(self, "features", x)

    @classmethod
    def from_edges(cls, num_nodes: int, edges, features=None, label=None, weights=None) -> "SparseGraph":
        """Graph from an undirected edge list.

        Each pair is inserted in both directions; repeated pairs keep the larger
        weight and self-loops are dropped.
        """
        e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        w = np.ones(e.shape[0]) if weights is None else np.asarray(weights, dtype=np.float64)
        keep = e[:, 0] != e[:, 1]
        e, w = e[keep], w[keep]
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        adj = CSR.from_coo(num_nodes, rows, cols, np.concatenate([w, w]), reduce="max")
        if features is None:
            features = np.ones((num_nodes, 1))
        return cls(adj, features, label)

    @classmethod
    def from_dense(cls, a, features=None, label=None) -> "SparseGraph":
        a = np.asarray(a, dtype=np.float64)
        if features is None:
            features = np.ones((a.shape[0], 1))
        return cls(CSR.from_dense(a), features, label)

    @property
    def num_nodes(self) -> int:
        return self.adjacency.n

    @property
    def num_edges(self) -> int:
        """Undirected edge count."""
        return self.adjacency.nnz // 2

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    def validate(self) -> None:
        """Full invariant check: symmetric, self-loop free."""
        if self.adjacency.has_diagonal():
            raise GraphError("stored adjacency must not contain self-loops")
        if not self.adjacency.is_symmetric():
            raise GraphError("adjacency is not symmetric")

    def equals(self, other: "SparseGraph") -> bool:
        return (
            self.adjacency.equals(other.adjacency)
            and np.array_equal(self.features, other.features)
            and self.label == other.label
        )


def normalize_csr(adj: CSR) -> NormalizedAdjacency:
    n = adj.n
    rows = adj.row_ids()
    cols, vals = adj.indices, adj.data
    if adj.has_diagonal():
        off = rows != cols
        adj = CSR.from_coo(n, rows[off], cols[off], vals[off])
        rows, cols, vals = adj.row_ids(), adj.indices, adj.data
    deg = np.bincount(rows, weights=vals, minlength=n) + 1.0
    # insert the diagonal without re-sorting: row i gains one slot, placed
    # after the entries with column < i
    indptr = adj.indptr + np.arange(n + 1, dtype=np.int64)
    new_pos = np.arange(rows.shape[0], dtype=np.int64) + rows + (cols > rows)
    diag_pos = indptr[:-1] + np.bincount(rows[cols < rows], minlength=n)
    indices = np.empty(indptr[-1], dtype=np.int64)
    data = np.empty(indptr[-1])
    indices[new_pos] = cols
    # sqrt of the product keeps equal-degree cases exact (two nodes give 0.5)
    data[new_pos] = vals / np.sqrt(deg[rows] * deg[cols])
    indices[diag_pos] = np.arange(n, dtype=np.int64)
    data[diag_pos] = 1.0 / deg
    return NormalizedAdjacency.trusted(indptr, indices, data, n)


def normalize_adjacency(g: SparseGraph | CSR) -> NormalizedAdjacency:
    """Symmetrically normalized adjacency with self-loops, ``D^-1/2 (A+I) D^-1/2``."""
    return normalize_csr(g.adjacency if isinstance(g, SparseGraph) else g)


def check_selection(idx, n: int) -> np.ndarray:
    idx = np.asarray(idx, dtype=np.int64).ravel()
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise InvalidSelectionError(f"node index outside [0, {n})")
    if np.unique(idx).shape[0] != idx.shape[0]:
        raise InvalidSelectionError("duplicate node index in selection")
    return idx


def induced_csr(adj: CSR, idx) -> CSR:
    idx = check_selection(idx, adj.n)
    indptr, indices, data = _kernels.csr_induced(adj.indptr, adj.indices, adj.data, idx)
    return CSR.trusted(indptr, indices, data, idx.shape[0])


def induced_subgraph(g: SparseGraph, idx) -> SparseGraph:
    """Subgraph on ``idx``; node ``a`` of the result is node ``idx[a]`` of ``g``."""
    idx = check_selection(idx, g.num_nodes)
    return SparseGraph(induced_csr(g.adjacency, idx), g.features[idx], g.label)


def two_hop_csr(adj: CSR, binarize: bool = False) -> CSR:
    n = adj.n
    rows = adj.row_ids()
    deg = np.diff(adj.indptr)
    # expand every edge (i, j) with each neighbour k of j: path i-j-k
    reps = deg[adj.indices]
    first = np.repeat(rows, reps)
    mid_vals = np.repeat(adj.data, reps)
    starts = np.repeat(adj.indptr[adj.indices], reps)
    within = np.arange(reps.sum()) - np.repeat(np.cumsum(reps) - reps, reps)
    pos = starts + within
    last = adj.indices[pos]
    sq_vals = mid_vals * adj.data[pos]
    off = first != last
    out = CSR.from_coo(
        n,
        np.concatenate([rows, first[off]]),
        np.concatenate([adj.indices, last[off]]),
        np.concatenate([adj.data, sq_vals[off]]),
    )
    if binarize:
        out = CSR(out.indptr, out.indices, np.ones(out.nnz), n)
    return out


def augment_two_hop(g: SparseGraph, binarize: bool = False) -> SparseGraph:
    """Graph with adjacency ``A + A^2``, diagonal of ``A^2`` dropped.

    Values count weighted paths of length one or two; ``binarize`` clamps them to 1.
    """
    return SparseGraph(two_hop_csr(g.adjacency, binarize), g.features, g.label)


@dataclass(frozen=True, eq=False)
class GraphBatch:
    """Several graphs merged block-diagonally into one disconnected graph."""

    graph: SparseGraph
    indicator: np.ndarray
    labels: np.ndarray
    offsets: np.ndarray = field(repr=False)

    @property
    def num_graphs(self) -> int:
        return self.offsets.shape[0] - 1

    def sizes(self) -> np.ndarray:
        return np.diff(self.offsets)

    def unbatch(self) -> list[SparseGraph]:
        out = []
        for g in range(self.num_graphs):
            lo, hi = self.offsets[g], self.offsets[g + 1]
            sub = induced_subgraph(self.graph, np.arange(lo, hi))
            label = None if self.labels[g] < 0 else int(self.labels[g])
            out.append(SparseGraph(sub.adjacency, sub.features, label))
        return out


def offsets_from_sizes(sizes) -> np.ndarray:
    offsets = np.zeros(len(sizes) + 1, dtype=np.int64)
    np.cumsum(sizes, out=offsets[1:])
    return offsets


def make_batch(graphs: Sequence[SparseGraph]) -> GraphBatch:
    """Merge graphs block-diagonally; missing labels are stored as -1."""
    if len(graphs) == 0:
        raise BatchError("cannot batch an empty list of graphs")
    width = graphs[0].num_features
    if any(g.num_features != width for g in graphs):
        raise BatchError("graphs in a batch must share the feature dimension")
    sizes = np.array([g.num_nodes for g in graphs], dtype=np.int64)
    offsets = offsets_from_sizes(sizes)
    nnz = np.array([g.adjacency.nnz for g in graphs], dtype=np.int64)
    nnz_off = offsets_from_sizes(nnz)
    indptr = np.concatenate([[0]] + [g.adjacency.indptr[1:] + nnz_off[i] for i, g in enumerate(graphs)])
    indices = np.concatenate([g.adjacency.indices + offsets[i] for i, g in enumerate(graphs)])
    data = np.concatenate([g.adjacency.data for g in graphs])
    adj = CSR(indptr, indices, data, int(offsets[-1]))
    x = np.concatenate([g.features for g in graphs], axis=0)
    indicator = np.repeat(np.arange(len(graphs), dtype=np.int64), sizes)
    labels = np.array([-1 if g.label is None else g.label for g in graphs], dtype=np.int64)
    return GraphBatch(SparseGraph(adj, x), indicator, labels, offsets)
