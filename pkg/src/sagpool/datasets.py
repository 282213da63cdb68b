"""TUDataset reader/writer, stratified fold plans and synthetic datasets.

File layout for a dataset ``DS`` under ``root`` (``root/DS/`` is also searched)::

    DS_A.txt               "row, col" per line, 1-indexed global node ids
    DS_graph_indicator.txt line i: graph id (1-indexed) of node i
    DS_graph_labels.txt    line g: label of graph g
    DS_node_labels.txt     optional, one integer per node
    DS_node_attributes.txt optional, comma-separated reals per node
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .graph import SparseGraph, induced_subgraph


class ParseError(ValueError):
    """Malformed dataset file; message names the file and line."""

    def __init__(self, path, line: int | None, message: str):
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {message}")
        self.path, self.line = path, line


class StratificationError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetSpec:
    name: str
    root: Path
    has_node_labels: bool = False
    has_node_attributes: bool = False

    @classmethod
    def discover(cls, name: str, root) -> "DatasetSpec":
        """Locate ``name``'s files under ``root`` or ``root/name`` and note optional files."""
        root = Path(root)
        for base in (root / name, root):
            if (base / f"{name}_A.txt").exists():
                root = base
                break
        return cls(
            name,
            root,
            (root / f"{name}_node_labels.txt").exists(),
            (root / f"{name}_node_attributes.txt").exists(),
        )

    def path(self, suffix: str) -> Path:
        return self.root / f"{self.name}_{suffix}.txt"


@dataclass(frozen=True)
class DatasetSummary:
    name: str
    num_graphs: int
    num_classes: int
    avg_nodes: float
    avg_edges: float
    num_features: int
    class_counts: tuple[int, ...]

    def as_row(self) -> dict:
        return {
            "dataset": self.name,
            "graphs": self.num_graphs,
            "classes": self.num_classes,
            "avg_nodes": round(self.avg_nodes, 2),
            "avg_edges": round(self.avg_edges, 2),
        }


def summarize(name: str, graphs: Sequence[SparseGraph]) -> DatasetSummary:
    labels = np.array([g.label for g in graphs], dtype=np.int64)
    counts = np.bincount(labels) if labels.size else np.zeros(0, np.int64)
    return DatasetSummary(
        name,
        len(graphs),
        int(counts.shape[0]),
        float(np.mean([g.num_nodes for g in graphs])),
        float(np.mean([g.num_edges for g in graphs])),
        graphs[0].num_features if graphs else 0,
        tuple(int(c) for c in counts),
    )


def _read_int_column(path: Path, with_lines: bool = False):
    out, lines = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s:
                continue
            try:
                out.append(int(s))
            except ValueError:
                raise ParseError(path, lineno, f"expected an integer, got {s!r}") from None
            lines.append(lineno)
    values = np.array(out, dtype=np.int64)
    return (values, np.array(lines, dtype=np.int64)) if with_lines else values


def _read_edges(path: Path):
    rows, lines = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s:
                continue
            parts = s.split(",")
            if len(parts) != 2:
                raise ParseError(path, lineno, f"expected 'row, col', got {s!r}")
            try:
                rows.append((int(parts[0]), int(parts[1])))
            except ValueError:
                raise ParseError(path, lineno, f"non-integer node id in {s!r}") from None
            lines.append(lineno)
    return np.array(rows, dtype=np.int64).reshape(-1, 2), np.array(lines, dtype=np.int64)


def _read_attributes(path: Path) -> np.ndarray:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s:
                continue
            try:
                out.append([float(t) for t in s.split(",")])
            except ValueError:
                raise ParseError(path, lineno, f"non-numeric attribute in {s!r}") from None
            if len(out[-1]) != len(out[0]):
                raise ParseError(path, lineno, "attribute rows differ in length")
    return np.array(out, dtype=np.float64)


def parse_tudataset(spec: DatasetSpec) -> tuple[list[SparseGraph], DatasetSummary]:
    """Read a TUDataset directory into per-graph :class:`SparseGraph` objects.

    Directed or duplicated edge lines are merged into one symmetric edge and
    self-loops are dropped. Node labels become one-hot columns (one per
    distinct label value, sorted), attributes are appended as raw values, and
    a constant 1.0 column is used when neither file exists. Graph labels are
    mapped to 0..C-1 in sorted order of their original values.
    """
    for suffix in ("A", "graph_indicator", "graph_labels"):
        if not spec.path(suffix).exists():
            raise ParseError(spec.path(suffix), None, "mandatory file missing")
    indicator, ind_lines = _read_int_column(spec.path("graph_indicator"), with_lines=True)
    raw_labels = _read_int_column(spec.path("graph_labels"))
    edges, edge_lines = _read_edges(spec.path("A"))
    num_nodes_total = indicator.shape[0]
    num_graphs = raw_labels.shape[0]

    ind_path = spec.path("graph_indicator")
    if num_nodes_total == 0:
        raise ParseError(ind_path, None, "no nodes")
    bad = np.flatnonzero((indicator < 1) | (indicator > num_graphs))
    if bad.size:
        raise ParseError(ind_path, int(ind_lines[bad[0]]), f"graph id {indicator[bad[0]]} outside 1..{num_graphs}")
    bad = np.flatnonzero(np.diff(indicator) < 0)
    if bad.size:
        raise ParseError(ind_path, int(ind_lines[bad[0] + 1]), "graph ids must be non-decreasing")
    gid = indicator - 1
    sizes = np.bincount(gid, minlength=num_graphs)
    if np.any(sizes == 0):
        raise ParseError(ind_path, None, f"graph {int(np.flatnonzero(sizes == 0)[0]) + 1} has no nodes")
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])

    a_path = spec.path("A")
    e = edges - 1
    bad = np.flatnonzero((e < 0).any(axis=1) | (e >= num_nodes_total).any(axis=1))
    if bad.size:
        raise ParseError(a_path, int(edge_lines[bad[0]]), f"node id outside 1..{num_nodes_total}")
    cross = np.flatnonzero(gid[e[:, 0]] != gid[e[:, 1]])
    if cross.size:
        raise ParseError(a_path, int(edge_lines[cross[0]]), "edge joins nodes of different graphs")

    blocks = []
    if spec.has_node_labels:
        nl = _read_int_column(spec.path("node_labels"))
        if nl.shape[0] != num_nodes_total:
            raise ParseError(spec.path("node_labels"), None, f"{nl.shape[0]} labels for {num_nodes_total} nodes")
        values, codes = np.unique(nl, return_inverse=True)
        onehot = np.zeros((num_nodes_total, values.shape[0]))
        onehot[np.arange(num_nodes_total), codes] = 1.0
        blocks.append(onehot)
    if spec.has_node_attributes:
        at = _read_attributes(spec.path("node_attributes"))
        if at.shape[0] != num_nodes_total:
            raise ParseError(spec.path("node_attributes"), None, f"{at.shape[0]} rows for {num_nodes_total} nodes")
        blocks.append(at)
    features = np.concatenate(blocks, axis=1) if blocks else np.ones((num_nodes_total, 1))

    _, label_codes = np.unique(raw_labels, return_inverse=True)

    order = np.argsort(gid[e[:, 0]], kind="stable")
    e = e[order]
    edge_graph = gid[e[:, 0]]
    edge_bounds = np.searchsorted(edge_graph, np.arange(num_graphs + 1))
    graphs = []
    for g in range(num_graphs):
        lo, hi = edge_bounds[g], edge_bounds[g + 1]
        local = e[lo:hi] - starts[g]
        s = starts[g]
        graphs.append(
            SparseGraph.from_edges(int(sizes[g]), local, features[s:s + sizes[g]], int(label_codes[g]))
        )
    return graphs, summarize(spec.name, graphs)


def load_dataset(name: str, root) -> tuple[list[SparseGraph], DatasetSummary]:
    return parse_tudataset(DatasetSpec.discover(name, root))


def write_tudataset(graphs: Sequence[SparseGraph], root, name: str, node_labels=None, attributes: bool = False) -> DatasetSpec:
    """Write ``graphs`` in TUDataset layout (each undirected edge listed both ways).

    ``node_labels`` (one integer array per graph) is written to the node label
    file; with ``attributes=True`` the feature matrices go to the attribute file.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    a_lines, ind_lines, lab_lines, nl_lines, at_lines = [], [], [], [], []
    offset = 0
    for gi, g in enumerate(graphs):
        rows = g.adjacency.row_ids()
        for r, c in zip(rows, g.adjacency.indices):
            a_lines.append(f"{r + offset + 1}, {c + offset + 1}")
        ind_lines += [str(gi + 1)] * g.num_nodes
        lab_lines.append(str(g.label))
        if node_labels is not None:
            nl_lines += [str(int(v)) for v in node_labels[gi]]
        if attributes:
            at_lines += [", ".join(repr(float(v)) for v in row) for row in g.features]
        offset += g.num_nodes

    def put(suffix, lines):
        (root / f"{name}_{suffix}.txt").write_text("\n".join(lines) + ("\n" if lines else ""))

    put("A", a_lines)
    put("graph_indicator", ind_lines)
    put("graph_labels", lab_lines)
    if node_labels is not None:
        put("node_labels", nl_lines)
    if attributes:
        put("node_attributes", at_lines)
    return DatasetSpec(name, root, node_labels is not None, attributes)


@dataclass(frozen=True)
class FoldPlan:
    """Ten-fold split: graph ``i`` is tested in fold ``folds[i]``.

    ``validation[f]`` lists the graphs held out from fold ``f``'s training
    portion for early stopping.
    """

    seed: int
    folds: np.ndarray
    validation: tuple[np.ndarray, ...] = field(repr=False)
    num_folds: int = 10

    def test_indices(self, f: int) -> np.ndarray:
        return np.flatnonzero(self.folds == f)

    def train_indices(self, f: int) -> np.ndarray:
        pool = np.flatnonzero(self.folds != f)
        return np.setdiff1d(pool, self.validation[f], assume_unique=True)

    def val_indices(self, f: int) -> np.ndarray:
        return self.validation[f]


def make_folds(labels, seed: int, num_folds: int = 10, stratify: bool = True, rng=None) -> FoldPlan:
    """Deterministic (stratified) k-fold assignment plus per-fold validation sets.

    Each class is shuffled and dealt round-robin over the folds, starting where
    the previous class stopped, so per-class fold counts differ by at most one.
    The validation subset is ``ceil(0.1 * |train pool|)`` graphs drawn
    stratified from the training pool of that fold.
    """
    labels = np.asarray(labels, dtype=np.int64).ravel()
    n = labels.shape[0]
    rng = np.random.default_rng(seed) if rng is None else rng
    folds = np.empty(n, dtype=np.int64)
    if stratify:
        classes, counts = np.unique(labels, return_counts=True)
        small = classes[counts < num_folds]
        if small.size:
            raise StratificationError(f"classes {small.tolist()} have fewer than {num_folds} members")
        cursor = 0
        for c in classes:
            members = rng.permutation(np.flatnonzero(labels == c))
            folds[members] = (cursor + np.arange(members.shape[0])) % num_folds
            cursor = (cursor + members.shape[0]) % num_folds
    else:
        if n < num_folds:
            raise StratificationError(f"need at least {num_folds} graphs, got {n}")
        folds[rng.permutation(n)] = np.arange(n) % num_folds
    validation = []
    for f in range(num_folds):
        pool = np.flatnonzero(folds != f)
        size = math.ceil(0.1 * pool.shape[0])
        if stratify:
            picked = _stratified_pick(pool, labels[pool], size, rng)
        else:
            picked = rng.choice(pool, size, replace=False)
        validation.append(np.sort(picked))
    return FoldPlan(seed, folds, tuple(validation), num_folds)


def _stratified_pick(pool, pool_labels, size, rng) -> np.ndarray:
    # largest-remainder allocation of `size` over classes
    classes, counts = np.unique(pool_labels, return_counts=True)
    quota = counts * size / counts.sum()
    take = np.floor(quota).astype(np.int64)
    rest = size - take.sum()
    take[np.argsort(-(quota - take), kind="stable")[:rest]] += 1
    picked = [rng.choice(pool[pool_labels == c], t, replace=False) for c, t in zip(classes, take)]
    return np.concatenate(picked)


# -- synthetic data ----------------------------------------------------------

def cycle_graph(n: int, label=None) -> SparseGraph:
    edges = [(i, (i + 1) % n) for i in range(n)] if n > 2 else [(i, i + 1) for i in range(n - 1)]
    return SparseGraph.from_edges(n, edges, np.ones((n, 1)), label)


def star_graph(n: int, label=None) -> SparseGraph:
    return SparseGraph.from_edges(n, [(0, i) for i in range(1, n)], np.ones((n, 1)), label)


def cycle_star_dataset(per_class: int = 200, min_nodes: int = 8, max_nodes: int = 24, seed: int = 0) -> list[SparseGraph]:
    """Cycles (label 0) vs stars (label 1), all node features equal to 1.0.

    Node order of every graph is shuffled so position carries no signal.
    """
    rng = np.random.default_rng(seed)
    graphs = []
    for label, make in ((0, cycle_graph), (1, star_graph)):
        for _ in range(per_class):
            g = make(int(rng.integers(min_nodes, max_nodes + 1)), label)
            graphs.append(induced_subgraph(g, rng.permutation(g.num_nodes)))
    order = rng.permutation(len(graphs))
    return [graphs[i] for i in order]


def random_graph(n: int, p: float, rng, num_features: int = 1, label=None) -> SparseGraph:
    """Erdos-Renyi graph with standard-normal features."""
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(iu.shape[0]) < p
    return SparseGraph.from_edges(n, np.stack([iu[keep], ju[keep]], axis=1), rng.standard_normal((n, num_features)), label)


def sparse_random_graph(n: int, avg_degree: float, rng, num_features: int = 1) -> SparseGraph:
    """Random graph with about ``n * avg_degree / 2`` edges, built without an ``n x n`` mask."""
    m = int(round(n * avg_degree / 2))
    src = rng.integers(0, n, size=2 * m)
    dst = rng.integers(0, n, size=2 * m)
    pairs = np.stack([np.minimum(src, dst), np.maximum(src, dst)], axis=1)
    pairs = np.unique(pairs[pairs[:, 0] != pairs[:, 1]], axis=0)
    pairs = pairs[rng.permutation(pairs.shape[0])[:m]]
    return SparseGraph.from_edges(n, pairs, rng.standard_normal((n, num_features)))
