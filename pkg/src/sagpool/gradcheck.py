"""Central finite-difference checks of analytic gradients."""
from __future__ import annotations

from collections import defaultdict
from typing import Callable

import numpy as np

from . import autograd as ag
from .datasets import random_graph
from .graph import make_batch
from .models import GlobalModel, HierarchicalModel, Model, cross_entropy


class UnstableDecisionError(RuntimeError):
    """A perturbation flipped a ReLU mask or a top-k selection."""


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """``||a - n|| / max(||a||, ||n||, floor)``.

    The floor sits at the resolution of central differences with h=1e-5 on an
    O(1) loss; gradients smaller than that cannot be resolved numerically.
    """
    diff = np.linalg.norm(analytic - numeric)
    return float(diff / max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor))


def _same(log_a, log_b) -> bool:
    return len(log_a) == len(log_b) and all(
        ta == tb and np.array_equal(pa, pb) for (ta, pa), (tb, pb) in zip(log_a, log_b)
    )


def numeric_gradient(f: Callable[[], float], t: ag.Tensor, h: float = 1e-5, reference=None) -> np.ndarray:
    """Central differences of scalar ``f`` w.r.t. every entry of ``t``.

    With ``reference`` (a decision log of the unperturbed evaluation), every
    perturbed evaluation must take the same discrete decisions.
    """
    grad = np.zeros_like(t.value)
    it = np.nditer(t.value, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = t.value[i]
        vals = []
        for step in (h, -h):
            t.value[i] = orig + step
            with ag.record_decisions() as log:
                vals.append(f())
            if reference is not None and not _same(log, reference):
                t.value[i] = orig
                raise UnstableDecisionError(f"perturbing entry {i} changed a discrete decision")
        t.value[i] = orig
        grad[i] = (vals[0] - vals[1]) / (2 * h)
    return grad


def check_model(model: Model, batch, h: float = 1e-5) -> dict[str, float]:
    """Relative error of every parameter's gradient of the cross-entropy loss."""

    def loss_value():
        with ag.no_grad():
            return float(cross_entropy(model(batch), batch.labels).value[0, 0])

    model.zero_grad()
    with ag.record_decisions() as reference:
        loss = cross_entropy(model(batch), batch.labels)
    loss.backward()
    errors = {}
    for name, t in model.parameters():
        numeric = numeric_gradient(loss_value, t, h, reference)
        errors[name] = relative_error(t.grad, numeric)
    return errors


def layer_of(name: str) -> str:
    return name.rsplit(".", 1)[0]


def random_batch(rng, num_graphs: int = 1, max_nodes: int = 15, num_features: int = 3, num_classes: int = 2):
    graphs = []
    for _ in range(num_graphs):
        n = int(rng.integers(2, max_nodes + 1))
        graphs.append(random_graph(n, 0.3, rng, num_features, int(rng.integers(num_classes))))
    return make_batch(graphs)


def model_suite(arch: str, seed: int, num_graphs: int = 20, hidden: int = 8, num_features: int = 3,
                num_classes: int = 2, max_nodes: int = 15, variant: str = "base", pooling: str = "sagpool",
                max_attempts: int = 20) -> dict[str, float]:
    """Max relative error per parameter over ``num_graphs`` random graphs.

    Graphs whose perturbations flip a discrete decision are redrawn (up to
    ``max_attempts`` times each).
    """
    rng = np.random.default_rng(seed)
    worst: dict[str, float] = defaultdict(float)
    for _ in range(num_graphs):
        for _attempt in range(max_attempts):
            batch = random_batch(rng, 1, max_nodes, num_features, num_classes)
            mrng = np.random.default_rng(int(rng.integers(2**32)))
            if arch == "hierarchical":
                model = HierarchicalModel(num_features, hidden, num_classes, 0.5, pooling, variant, rng=mrng)
            else:
                keep = int(rng.integers(1, max_nodes + 1))
                model = GlobalModel(num_features, hidden, num_classes, keep, pooling, variant, rng=mrng)
            try:
                errors = check_model(model, batch)
            except UnstableDecisionError:
                continue
            break
        else:
            raise UnstableDecisionError("could not draw a graph away from kinks and ties")
        for name, e in errors.items():
            worst[name] = max(worst[name], e)
    return dict(worst)


def per_layer(errors: dict[str, float]) -> dict[str, float]:
    out: dict[str, float] = {}
    for name, e in errors.items():
        key = layer_of(name)
        out[key] = max(out.get(key, 0.0), e)
    return out
