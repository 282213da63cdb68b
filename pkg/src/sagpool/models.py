"""Global and hierarchical pooling architectures for graph classification."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import ShapeError, Tensor
from .graph import GraphBatch, normalize_csr
from .layers import GcnLayer, GPoolLayer, SagPoolLayer, glorot, readout

CHECKPOINT_FORMAT = "sagpool-checkpoint"
CHECKPOINT_VERSION = 1


class Linear:
    def __init__(self, in_dim: int, out_dim: int, rng):
        self.weight = glorot(rng, in_dim, out_dim)
        self.bias = Tensor(np.zeros((1, out_dim)), requires_grad=True)

    def parameters(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def __call__(self, x: Tensor) -> Tensor:
        return ag.add_bias(ag.matmul(x, self.weight), self.bias)


class ClassifierHead:
    """Two linear layers with a ReLU between them."""

    def __init__(self, in_dim: int, hidden: int, num_classes: int, rng):
        self.lin1 = Linear(in_dim, hidden, rng)
        self.lin2 = Linear(hidden, num_classes, rng)

    def parameters(self):
        return _prefixed([("lin1", self.lin1), ("lin2", self.lin2)])

    def __call__(self, x: Tensor) -> Tensor:
        return self.lin2(ag.relu(self.lin1(x)))


def _prefixed(children):
    return [(f"{name}.{p}", t) for name, child in children for p, t in child.parameters()]


def make_pool(pooling: str, in_dim: int, rng, ratio=None, max_keep=None, variant="base", heads=2,
              binarize_augmented=False):
    if pooling == "sagpool":
        return SagPoolLayer(in_dim, ratio, variant, heads, rng, max_keep, binarize_augmented)
    if pooling == "gpool":
        return GPoolLayer(in_dim, ratio, rng, max_keep)
    raise ValueError(f"unknown pooling method {pooling!r}")


class Model:
    """Common parameter bookkeeping."""

    def children(self):
        raise NotImplementedError

    def parameters(self) -> list[tuple[str, Tensor]]:
        return _prefixed(self.children())

    def num_parameters(self) -> int:
        return sum(t.value.size for _, t in self.parameters())

    def inventory(self) -> list[tuple[str, tuple[int, int]]]:
        return [(name, t.shape) for name, t in self.parameters()]

    def zero_grad(self) -> None:
        for _, t in self.parameters():
            t.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.value.copy() for name, t in self.parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.parameters())
        if set(params) != set(state):
            raise KeyError(f"parameter names differ: {sorted(set(params) ^ set(state))}")
        for name, t in params.items():
            v = np.asarray(state[name], dtype=np.float64)
            if v.shape != t.shape:
                raise ShapeError(f"{name}: stored shape {v.shape} != {t.shape}")
            t.value[...] = v

    def logits(self, batch: GraphBatch) -> Tensor:
        raise NotImplementedError

    def __call__(self, batch: GraphBatch) -> Tensor:
        return self.logits(batch)


class HierarchicalModel(Model):
    """Three (convolution, pooling) blocks; the per-block readouts are summed."""

    def __init__(self, in_dim: int, hidden: int, num_classes: int, ratio: float = 0.5, pooling: str = "sagpool",
                 variant: str = "base", heads: int = 2, rng=None, binarize_augmented: bool = False):
        rng = np.random.default_rng(0) if rng is None else rng
        self.in_dim, self.hidden, self.num_classes = in_dim, hidden, num_classes
        self.convs = [GcnLayer(in_dim if b == 0 else hidden, hidden, "relu", rng) for b in range(3)]
        self.pools = [
            make_pool(pooling, hidden, rng, ratio=ratio, variant=variant, heads=heads,
                      binarize_augmented=binarize_augmented)
            for _ in range(3)
        ]
        self.head = ClassifierHead(2 * hidden, hidden, num_classes, rng)

    def children(self):
        out = []
        for b in range(3):
            out += [(f"conv{b + 1}", self.convs[b]), (f"pool{b + 1}", self.pools[b])]
        return out + [("head", self.head)]

    def logits(self, batch: GraphBatch) -> Tensor:
        return forward_hierarchical(self, batch)


def forward_hierarchical(model: HierarchicalModel, batch: GraphBatch) -> Tensor:
    x = Tensor(batch.graph.features)
    if x.shape[1] != model.in_dim:
        raise ShapeError(f"model expects {model.in_dim} node features, batch has {x.shape[1]}")
    adj, indicator, b = batch.graph.adjacency, batch.indicator, batch.num_graphs
    total = None
    for conv, pool in zip(model.convs, model.pools):
        norm = normalize_csr(adj)
        h = conv(norm, x)
        out = pool(adj, h, indicator, b, norm)
        r = readout(out.x, out.indicator, b)
        total = r if total is None else ag.add(total, r)
        x, adj, indicator = out.x, out.adjacency, out.indicator
    return model.head(total)


class GlobalModel(Model):
    """Three stacked convolutions, concatenated, one pooling step keeping ``keep`` nodes."""

    def __init__(self, in_dim: int, hidden: int, num_classes: int, keep: int, pooling: str = "sagpool",
                 variant: str = "base", heads: int = 2, rng=None, binarize_augmented: bool = False):
        rng = np.random.default_rng(0) if rng is None else rng
        self.in_dim, self.hidden, self.num_classes, self.keep = in_dim, hidden, num_classes, keep
        self.convs = [GcnLayer(in_dim if i == 0 else hidden, hidden, "relu", rng) for i in range(3)]
        self.pool = make_pool(pooling, 3 * hidden, rng, max_keep=keep, variant=variant, heads=heads,
                              binarize_augmented=binarize_augmented)
        self.head = ClassifierHead(6 * hidden, hidden, num_classes, rng)

    def children(self):
        return [(f"conv{i + 1}", c) for i, c in enumerate(self.convs)] + [("pool", self.pool), ("head", self.head)]

    def logits(self, batch: GraphBatch) -> Tensor:
        return forward_global(self, batch)


def forward_global(model: GlobalModel, batch: GraphBatch) -> Tensor:
    x = Tensor(batch.graph.features)
    if x.shape[1] != model.in_dim:
        raise ShapeError(f"model expects {model.in_dim} node features, batch has {x.shape[1]}")
    adj = batch.graph.adjacency
    norm = normalize_csr(adj)
    hs = []
    h = x
    for conv in model.convs:
        h = conv(norm, h)
        hs.append(h)
    out = model.pool(adj, ag.concat_cols(hs), batch.indicator, batch.num_graphs, norm)
    return model.head(readout(out.x, out.indicator, batch.num_graphs))


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean softmax cross-entropy, stabilized by subtracting each row's max."""
    return ag.softmax_cross_entropy(logits, labels)


def hierarchical_parameter_count(in_dim: int, hidden: int, num_classes: int, pool_params_per_layer=None) -> int:
    """Closed form for a base-variant hierarchical model."""
    pool = hidden if pool_params_per_layer is None else pool_params_per_layer
    convs = in_dim * hidden + 2 * hidden * hidden
    head = 2 * hidden * hidden + hidden + hidden * num_classes + num_classes
    return convs + 3 * pool + head


def retention_count(node_counts, fraction_above: float = 0.6) -> int:
    """Largest ``K`` such that at least ``fraction_above`` of graphs have more than ``K`` nodes."""
    sizes = np.sort(np.asarray(node_counts, dtype=np.int64))
    if sizes.size == 0:
        raise ValueError("no graphs to compute K from")
    need = int(np.ceil(np.round(fraction_above * sizes.size, 9)))
    # the need-th largest size minus one is the largest K with `need` graphs strictly above it
    return max(int(sizes[sizes.size - need]) - 1, 1)


def build_model(config, in_dim: int, num_classes: int, keep: int | None = None, rng=None) -> Model:
    """Model described by a :class:`~sagpool.training.TrialConfig`."""
    if config.arch == "hierarchical":
        return HierarchicalModel(in_dim, config.hidden, num_classes, config.ratio, config.pooling,
                                 config.variant, config.heads, rng, config.binarize_augmented)
    if config.arch == "global":
        if keep is None:
            raise ValueError("global architecture needs the retention count K")
        return GlobalModel(in_dim, config.hidden, num_classes, keep, config.pooling, config.variant,
                           config.heads, rng, config.binarize_augmented)
    raise ValueError(f"unknown architecture {config.arch!r}")


def save_checkpoint(path, model: Model, config=None, extra: dict | None = None) -> None:
    """Write parameters as JSON; floats round-trip exactly through ``repr``."""
    meta = {
        "in_dim": model.in_dim,
        "num_classes": model.num_classes,
        "keep": getattr(model, "keep", None),
    }
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model": meta,
        "config": None if config is None else config.to_dict(),
        "parameters": {
            name: {"shape": list(t.shape), "values": t.value.ravel().tolist()} for name, t in model.parameters()
        },
    }
    if extra:
        doc["extra"] = extra
    Path(path).write_text(json.dumps(doc, indent=1))


def load_checkpoint(path):
    """Return ``(model, config)`` rebuilt from a checkpoint file."""
    from .training import TrialConfig

    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a checkpoint file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    config = TrialConfig.from_dict(doc["config"])
    meta = doc["model"]
    model = build_model(config, meta["in_dim"], meta["num_classes"], meta["keep"])
    model.load_state_dict({
        name: np.array(p["values"], dtype=np.float64).reshape(p["shape"]) for name, p in doc["parameters"].items()
    })
    return model, config
