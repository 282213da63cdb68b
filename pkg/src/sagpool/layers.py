"""Graph convolution, attention-scored top-k pooling and the mean/max readout.

All layers work on block-diagonal batches: node features are one ``Tensor``,
the adjacency one CSR matrix, and ``indicator`` maps each row to its graph.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import ShapeError, Tensor
from .graph import CSR, NormalizedAdjacency, induced_csr, normalize_csr, two_hop_csr

ACTIVATIONS = {"relu": ag.relu, "tanh": ag.tanh, "identity": ag.identity}
VARIANTS = ("base", "augmentation", "serial", "parallel")


class DegenerateParameterError(ValueError):
    """A projection vector has zero norm."""


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> Tensor:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-a, a, size=(fan_in, fan_out)), requires_grad=True)


class GcnLayer:
    """``act(A_hat @ H @ W)`` with a single ``F x F'`` weight and no bias."""

    def __init__(self, in_dim: int, out_dim: int, activation: str = "relu", rng=None, weight=None):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        rng = np.random.default_rng(0) if rng is None else rng
        self.in_dim, self.out_dim = in_dim, out_dim
        self.activation = activation
        self.weight = glorot(rng, in_dim, out_dim) if weight is None else ag.Tensor(weight, requires_grad=True)
        if self.weight.shape != (in_dim, out_dim):
            raise ShapeError(f"weight shape {self.weight.shape} != {(in_dim, out_dim)}")

    def parameters(self) -> list[tuple[str, Tensor]]:
        return [("weight", self.weight)]

    def __call__(self, adj: NormalizedAdjacency, h: Tensor) -> Tensor:
        return gcn_forward(self, adj, h)


def gcn_forward(layer: GcnLayer, adj: NormalizedAdjacency, h: Tensor) -> Tensor:
    h = ag.as_tensor(h)
    if h.shape[0] != adj.n:
        raise ShapeError(f"{h.shape[0]} feature rows for a {adj.n}-node adjacency")
    if h.shape[1] != layer.in_dim:
        raise ShapeError(f"layer expects {layer.in_dim} input features, got {h.shape[1]}")
    return ACTIVATIONS[layer.activation](ag.spmm(adj, ag.matmul(h, layer.weight)))


def top_rank(scores, ratio: float | None, indicator, num_graphs: int, max_keep: int | None = None) -> np.ndarray:
    """Indices of the highest-scoring nodes of every graph.

    Keeps ``ceil(ratio * N_g)`` nodes per graph, or ``min(max_keep, N_g)`` when
    ``max_keep`` is given. Within a graph the order is descending score, ties
    going to the lower node index; graphs follow batch order.
    """
    z = np.asarray(scores, dtype=np.float64).ravel()
    indicator = np.asarray(indicator, dtype=np.int64).ravel()
    sizes = np.bincount(indicator, minlength=num_graphs)
    counts = keep_counts(sizes, ratio, max_keep)
    order = np.lexsort((np.arange(z.shape[0]), -z, indicator))
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    rank = np.arange(z.shape[0]) - starts[indicator[order]]
    idx = order[rank < counts[indicator[order]]]
    ag.log_decision("top_rank", idx)
    return idx


def keep_counts(sizes, ratio: float | None, max_keep: int | None = None) -> np.ndarray:
    sizes = np.asarray(sizes, dtype=np.int64)
    if max_keep is not None:
        if max_keep < 1:
            raise ValueError("max_keep must be at least 1")
        return np.minimum(sizes, max_keep)
    if ratio is None or not 0.0 < ratio <= 1.0:
        raise ValueError(f"pooling ratio must lie in (0, 1], got {ratio}")
    # rounding first stops 0.1 * 30 = 3.0000000000000004 from ceiling to 4
    return np.ceil(np.round(ratio * sizes, 9)).astype(np.int64)


@dataclass
class PoolOutcome:
    scores: Tensor
    idx: np.ndarray
    x: Tensor
    adjacency: CSR
    indicator: np.ndarray
    num_graphs: int


class SagPoolLayer:
    """Self-attention pooling: scores from a graph convolution, top-k, gating.

    ``variant`` picks how the scores are computed:

    * ``base``: ``tanh(A_hat X w)``
    * ``augmentation``: same, on the normalized two-hop graph ``A + A^2``
    * ``serial``: ``tanh(GCN2(tanh(GCN1(X))))``, hidden width equal to the input width
    * ``parallel``: mean of ``heads`` independent base scores
    """

    def __init__(
        self,
        in_dim: int,
        ratio: float | None = 0.5,
        variant: str = "base",
        heads: int = 2,
        rng=None,
        max_keep: int | None = None,
        binarize_augmented: bool = False,
    ):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}; choose from {VARIANTS}")
        if max_keep is None and (ratio is None or not 0.0 < ratio <= 1.0):
            raise ValueError(f"pooling ratio must lie in (0, 1], got {ratio}")
        rng = np.random.default_rng(0) if rng is None else rng
        self.in_dim = in_dim
        self.ratio = ratio
        self.max_keep = max_keep
        self.variant = variant
        self.binarize_augmented = binarize_augmented
        if variant == "serial":
            self.convs = [
                GcnLayer(in_dim, in_dim, "tanh", rng),
                GcnLayer(in_dim, 1, "tanh", rng),
            ]
        else:
            m = heads if variant == "parallel" else 1
            if m < 1:
                raise ValueError("parallel variant needs at least one head")
            self.convs = [GcnLayer(in_dim, 1, "tanh", rng) for _ in range(m)]

    def parameters(self) -> list[tuple[str, Tensor]]:
        return [(f"att{i}.weight", c.weight) for i, c in enumerate(self.convs)]

    def score_adjacency(self, adjacency: CSR, norm: NormalizedAdjacency | None = None) -> NormalizedAdjacency:
        if self.variant == "augmentation":
            return normalize_csr(two_hop_csr(adjacency, self.binarize_augmented))
        return normalize_csr(adjacency) if norm is None else norm

    def scores(self, adjacency: CSR, x: Tensor, norm: NormalizedAdjacency | None = None) -> Tensor:
        return attention_scores(self, adjacency, x, norm)

    def gate_and_rank(self, adjacency, x, norm=None):
        z = self.scores(adjacency, x, norm)
        return z, z.value

    def __call__(self, adjacency, x, indicator, num_graphs, norm=None) -> PoolOutcome:
        return pool(self, adjacency, x, indicator, num_graphs, norm)


def attention_scores(layer: SagPoolLayer, adjacency: CSR, x: Tensor, norm: NormalizedAdjacency | None = None) -> Tensor:
    x = ag.as_tensor(x)
    if x.shape[1] != layer.in_dim:
        raise ShapeError(f"pooling layer expects {layer.in_dim} features, got {x.shape[1]}")
    a = layer.score_adjacency(adjacency, norm)
    if layer.variant == "serial":
        return layer.convs[1](a, layer.convs[0](a, x))
    heads = [conv(a, x) for conv in layer.convs]
    if len(heads) == 1:
        return heads[0]
    total = heads[0]
    for h in heads[1:]:
        total = ag.add(total, h)
    return ag.scale(total, 1.0 / len(heads))


class GPoolLayer:
    """Projection-score pooling: ``y = X p / ||p||``, gate ``tanh(y)``; topology-blind."""

    def __init__(self, in_dim: int, ratio: float | None = 0.5, rng=None, max_keep: int | None = None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.in_dim = in_dim
        self.ratio = ratio
        self.max_keep = max_keep
        self.variant = "gpool"
        self.p = glorot(rng, in_dim, 1)

    def parameters(self) -> list[tuple[str, Tensor]]:
        return [("p", self.p)]

    def projection(self, x: Tensor) -> Tensor:
        return gpool_scores(self.p, x)

    def scores(self, adjacency: CSR, x: Tensor, norm=None) -> Tensor:
        return ag.tanh(self.projection(x))

    def gate_and_rank(self, adjacency, x, norm=None):
        # rank on the raw projection; tanh saturates and could create ties
        y = self.projection(x)
        return ag.tanh(y), y.value

    def __call__(self, adjacency, x, indicator, num_graphs, norm=None) -> PoolOutcome:
        return pool(self, adjacency, x, indicator, num_graphs, norm)


def gpool_scores(p: Tensor, x: Tensor) -> Tensor:
    """Projection of each node's features onto the unit vector along ``p``."""
    p, x = ag.as_tensor(p), ag.as_tensor(x)
    if p.shape != (x.shape[1], 1):
        raise ShapeError(f"projection vector {p.shape} for {x.shape[1]} features")
    if not np.any(p.value):
        raise DegenerateParameterError("gPool projection vector has zero norm")
    return ag.matmul(x, ag.unit_col(p))


def pool(layer, adjacency: CSR, x: Tensor, indicator, num_graphs: int, norm=None) -> PoolOutcome:
    """Score, select and gate: ``X_out = X[idx] * Z[idx]``, ``A_out = A[idx][:, idx]``."""
    x = ag.as_tensor(x)
    if x.shape[0] != adjacency.n:
        raise ShapeError(f"{x.shape[0]} feature rows for a {adjacency.n}-node adjacency")
    z, rank_values = layer.gate_and_rank(adjacency, x, norm)
    idx = top_rank(rank_values, layer.ratio, indicator, num_graphs, layer.max_keep)
    x_out = ag.mul_col(ag.gather_rows(x, idx), ag.gather_rows(z, idx))
    indicator = np.asarray(indicator, dtype=np.int64)[idx]
    return PoolOutcome(z, idx, x_out, induced_csr(adjacency, idx), indicator, num_graphs)


def readout(h: Tensor, indicator, num_graphs: int) -> Tensor:
    """Per-graph ``mean || max`` over nodes, ``B x 2F``."""
    return ag.concat_cols([ag.segment_mean(h, indicator, num_graphs), ag.segment_max(h, indicator, num_graphs)])
