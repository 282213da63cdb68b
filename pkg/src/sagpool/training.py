"""Adam, early-stopped training, cross-validation and grid search."""
from __future__ import annotations

import csv
import itertools
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autograd as ag
from .autograd import NonFiniteError
from .datasets import make_folds
from .graph import SparseGraph, make_batch
from .models import Model, build_model, cross_entropy, retention_count

log = logging.getLogger(__name__)

GRID = {
    "lr": (1e-2, 5e-2, 1e-3, 5e-3, 1e-4, 5e-4),
    "hidden": (16, 32, 64, 128),
    "weight_decay": (1e-2, 1e-3, 1e-4, 1e-5),
    "ratio": (0.5, 0.25),
}
ARCHS = ("global", "hierarchical")
POOLINGS = ("sagpool", "gpool")
VARIANTS = ("base", "augmentation", "serial", "parallel")

# one root seed, independent named substreams
STREAMS = {"folds": 1, "init": 2, "shuffle": 3}


class ConfigError(ValueError):
    pass


def substream(seed: int, name: str, *extra: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), STREAMS[name], *map(int, extra)])


@dataclass(frozen=True)
class TrialConfig:
    arch: str = "hierarchical"
    pooling: str = "sagpool"
    variant: str = "base"
    heads: int = 2
    lr: float = 5e-4
    hidden: int = 64
    weight_decay: float = 1e-4
    ratio: float | None = None
    seed: int = 0
    patience: int = 50
    max_epochs: int = 1000
    batch_size: int = 128
    folds: int = 10
    stratify: bool = True
    binarize_augmented: bool = False
    off_grid: bool = False

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ConfigError(f"arch must be one of {ARCHS}, got {self.arch!r}")
        if self.pooling not in POOLINGS:
            raise ConfigError(f"pooling must be one of {POOLINGS}, got {self.pooling!r}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.pooling == "gpool" and self.variant != "base":
            raise ConfigError("score variants apply to sagpool only")
        if self.arch == "global":
            if self.ratio is not None:
                raise ConfigError("the global architecture keeps a fixed node count; a pooling ratio does not apply")
        elif self.ratio is None:
            object.__setattr__(self, "ratio", 0.5)
        elif not 0.0 < self.ratio <= 1.0:
            raise ConfigError(f"pooling ratio must lie in (0, 1], got {self.ratio}")
        if self.heads < 1:
            raise ConfigError("heads must be positive")
        if self.patience < 0 or self.max_epochs < 1 or self.batch_size < 1 or self.folds < 2:
            raise ConfigError("patience >= 0, max_epochs >= 1, batch_size >= 1 and folds >= 2 required")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if not self.off_grid:
            for key in ("lr", "hidden", "weight_decay"):
                if getattr(self, key) not in GRID[key]:
                    raise ConfigError(f"{key}={getattr(self, key)} is not on the search grid {GRID[key]}; mark the run off-grid")
            if self.arch == "hierarchical" and self.ratio not in GRID["ratio"]:
                raise ConfigError(f"ratio={self.ratio} is not on the search grid {GRID['ratio']}; mark the run off-grid")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrialConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @property
    def method(self) -> str:
        name = ("SAGPool" if self.pooling == "sagpool" else "gPool") + ("_h" if self.arch == "hierarchical" else "_g")
        if self.variant == "parallel":
            return f"{name},parallel,M={self.heads}"
        return name if self.variant == "base" else f"{name},{self.variant}"


# -- optimizer -------------------------------------------------------------

@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls([np.zeros_like(p.value) for p in params], [np.zeros_like(p.value) for p in params])


def adam_step(params, grads, state: AdamState, lr: float, weight_decay: float = 0.0,
              betas=(0.9, 0.999), eps: float = 1e-8) -> AdamState:
    """One Adam update in place; L2 decay is added to the gradient before the moments."""
    b1, b2 = betas
    for g in grads:
        if not np.isfinite(g).all():
            raise NonFiniteError("non-finite gradient; aborting training")
    state.t += 1
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g = g + weight_decay * p.value
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.value -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


# -- training ----------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_acc: float


@dataclass
class History:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = float("inf")
    best_val_acc: float = 0.0

    def best_so_far(self) -> list[float]:
        return np.minimum.accumulate([r.val_loss for r in self.epochs]).tolist() if self.epochs else []


def batches(graphs: Sequence[SparseGraph], size: int, order=None):
    order = np.arange(len(graphs)) if order is None else order
    for lo in range(0, len(order), size):
        yield make_batch([graphs[i] for i in order[lo:lo + size]])


def evaluate(model: Model, graphs: Sequence[SparseGraph], batch_size: int = 256) -> tuple[float, float]:
    """Mean loss and accuracy over ``graphs`` without building a gradient graph."""
    total_loss, correct = 0.0, 0
    with ag.no_grad():
        for batch in batches(graphs, batch_size):
            logits = model(batch)
            total_loss += cross_entropy(logits, batch.labels).value[0, 0] * batch.num_graphs
            correct += int(np.count_nonzero(np.argmax(logits.value, axis=1) == batch.labels))
    return total_loss / len(graphs), correct / len(graphs)


def predict(model: Model, graphs: Sequence[SparseGraph], batch_size: int = 256) -> np.ndarray:
    with ag.no_grad():
        return np.concatenate([np.argmax(model(b).value, axis=1) for b in batches(graphs, batch_size)])


def train_one(config: TrialConfig, train: Sequence[SparseGraph], val: Sequence[SparseGraph],
              num_classes: int | None = None, keep: int | None = None, fold: int = 0) -> tuple[Model, History]:
    """Minibatch Adam with early stopping on validation loss.

    Stops once the validation loss has not improved for ``patience`` epochs
    (so ``patience=0`` runs exactly one epoch) or after ``max_epochs``.
    The returned model carries the parameters of the best validation epoch.
    """
    if not train or not val:
        raise ValueError("training and validation splits must be non-empty")
    if num_classes is None:
        num_classes = 1 + max(g.label for g in itertools.chain(train, val))
    if config.arch == "global" and keep is None:
        keep = retention_count([g.num_nodes for g in train])
    model = build_model(config, train[0].num_features, num_classes, keep, substream(config.seed, "init", fold))
    params = [t for _, t in model.parameters()]
    state = AdamState.zeros_like(params)
    shuffle = substream(config.seed, "shuffle", fold)
    history = History()
    best_state = model.state_dict()
    since_best = 0
    for epoch in range(1, config.max_epochs + 1):
        total = 0.0
        for batch in batches(train, config.batch_size, shuffle.permutation(len(train))):
            model.zero_grad()
            loss = cross_entropy(model(batch), batch.labels)
            loss.backward()
            adam_step(params, [p.grad for p in params], state, config.lr, config.weight_decay)
            total += loss.value[0, 0] * batch.num_graphs
        val_loss, val_acc = evaluate(model, val)
        history.epochs.append(EpochRecord(epoch, total / len(train), val_loss, val_acc))
        if val_loss < history.best_val_loss:
            history.best_val_loss, history.best_val_acc, history.best_epoch = val_loss, val_acc, epoch
            best_state = model.state_dict()
            since_best = 0
        else:
            since_best += 1
        if since_best >= config.patience:
            break
    model.load_state_dict(best_state)
    return model, history


# -- cross-validation ----------------------------------------------------------

@dataclass
class TrialResult:
    config: TrialConfig
    fold_test_acc: list[float]
    fold_val_acc: list[float]
    epochs: list[int]
    val_loss_trajectories: list[list[float]]
    wall_time: float
    test_mean: float = 0.0
    test_std: float = 0.0
    val_mean: float = 0.0
    diverged: bool = False
    dataset: str = ""

    def __post_init__(self):
        if self.fold_test_acc:
            self.test_mean, self.test_std = aggregate(self.fold_test_acc)
        if self.fold_val_acc:
            self.val_mean = float(np.mean(self.fold_val_acc))

    def aggregates_consistent(self) -> bool:
        mean, std = aggregate(self.fold_test_acc)
        return mean == self.test_mean and std == self.test_std

    def to_dict(self, timings: bool = True) -> dict:
        d = {
            "dataset": self.dataset,
            "method": self.config.method,
            "config": self.config.to_dict(),
            "fold_test_acc": self.fold_test_acc,
            "fold_val_acc": self.fold_val_acc,
            "test_mean": self.test_mean,
            "test_std": self.test_std,
            "val_mean": self.val_mean,
            "epochs": self.epochs,
            "diverged": self.diverged,
            "val_loss_trajectories": self.val_loss_trajectories,
        }
        if timings:
            d["wall_time"] = self.wall_time
        return d


def aggregate(values) -> tuple[float, float]:
    """Mean and population standard deviation."""
    a = np.asarray(values, dtype=np.float64)
    return float(a.mean()), float(a.std())


def _fold_job(args):
    config, graphs, plan, fold, num_classes = args
    tr, va, te = plan.train_indices(fold), plan.val_indices(fold), plan.test_indices(fold)
    train = [graphs[i] for i in tr]
    val = [graphs[i] for i in va]
    keep = retention_count([g.num_nodes for g in train]) if config.arch == "global" else None
    model, hist = train_one(config, train, val, num_classes, keep, fold)
    test = [graphs[i] for i in te]
    test_acc = float(np.mean(predict(model, test) == np.array([g.label for g in test])))
    return test_acc, hist.best_val_acc, len(hist.epochs), hist.best_so_far()


def cross_validate(config: TrialConfig, graphs: Sequence[SparseGraph], jobs: int = 1, dataset: str = "",
                   on_fold: Callable | None = None) -> TrialResult:
    """k-fold CV; per-fold test accuracy comes from the best-validation model."""
    labels = np.array([g.label for g in graphs], dtype=np.int64)
    num_classes = int(labels.max()) + 1
    plan = make_folds(labels, config.seed, config.folds, config.stratify, rng=substream(config.seed, "folds"))
    start = time.perf_counter()
    jobs_args = [(config, graphs, plan, f, num_classes) for f in range(config.folds)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_fold_job, jobs_args))
    else:
        outcomes = []
        for f, args in enumerate(jobs_args):
            outcomes.append(_fold_job(args))
            if on_fold is not None:
                on_fold(f, outcomes[-1])
    return TrialResult(
        config,
        [o[0] for o in outcomes],
        [o[1] for o in outcomes],
        [o[2] for o in outcomes],
        [o[3] for o in outcomes],
        time.perf_counter() - start,
        dataset=dataset,
    )


# -- grid search ----------------------------------------------------------------

def table_grid(base: TrialConfig, lrs=None, hiddens=None, weight_decays=None, ratios=None) -> list[TrialConfig]:
    """Cartesian product over the search grid (ratios only for the hierarchical architecture)."""
    lrs = GRID["lr"] if lrs is None else lrs
    hiddens = GRID["hidden"] if hiddens is None else hiddens
    weight_decays = GRID["weight_decay"] if weight_decays is None else weight_decays
    if base.arch == "hierarchical":
        ratios = GRID["ratio"] if ratios is None else ratios
    else:
        ratios = (None,)
    return [
        replace(base, lr=lr, hidden=h, weight_decay=wd, ratio=r)
        for lr, h, wd, r in itertools.product(lrs, hiddens, weight_decays, ratios)
    ]


def grid_search(grid: Sequence[TrialConfig], graphs: Sequence[SparseGraph], jobs: int = 1, dataset: str = "",
                on_result: Callable[[TrialResult], None] | None = None) -> tuple[TrialConfig, list[TrialResult]]:
    """Pick the config with the highest mean validation accuracy (first wins ties).

    A trial that hits a non-finite loss or gradient scores 0.
    """
    if not grid:
        raise ValueError("empty grid")
    results = []
    for config in grid:
        try:
            result = cross_validate(config, graphs, jobs, dataset)
        except NonFiniteError as exc:
            log.warning("trial diverged (%s): %s", exc, config)
            result = TrialResult(config, [], [], [], [], 0.0, diverged=True, dataset=dataset)
        results.append(result)
        if on_result is not None:
            on_result(result)
    scores = [0.0 if r.diverged else r.val_mean for r in results]
    best = int(np.argmax(scores))
    return grid[best], results


# -- result files -------------------------------------------------------------------

def append_trial_record(path, result: TrialResult) -> None:
    """Append one JSON line per trial."""
    with open(path, "a") as fh:
        fh.write(json.dumps(result.to_dict(), sort_keys=True) + "\n")


def read_trial_records(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


def write_summary_csv(path, records: Sequence[dict]) -> None:
    """Methods as rows, datasets as columns, cells ``mean ± std`` in percent."""
    methods, datasets, cells = [], [], {}
    for r in records:
        m, d = r["method"], r["dataset"]
        if m not in methods:
            methods.append(m)
        if d not in datasets:
            datasets.append(d)
        cells[m, d] = "diverged" if r.get("diverged") else f"{100 * r['test_mean']:.2f} ± {100 * r['test_std']:.2f}"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", *datasets])
        for m in methods:
            w.writerow([m, *(cells.get((m, d), "") for d in datasets)])
