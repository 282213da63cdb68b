"""Dense 2-D tensors with reverse-mode differentiation.

Every value is a float64 matrix. Operations record their inputs and a closure
computing the vector-Jacobian product; :func:`backward` walks the recorded
graph once in reverse topological order and accumulates into the ``grad`` of
leaf tensors created with ``requires_grad=True``.

Only one broadcasting form exists: an ``N x 1`` column times an ``N x F``
matrix (:func:`mul_col`). Bias rows are added with :func:`add_bias`.
"""
from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from . import _kernels
from .graph import NormalizedAdjacency


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf."""


class SegmentError(ValueError):
    """Segment reduction over an empty segment or a malformed indicator."""


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "op", "parents", "_vjp")

    def __init__(self, value, requires_grad: bool = False, op: str = "leaf", parents=(), vjp=None):
        # op outputs are fresh arrays; only leaves need a private copy
        v = np.array(value, dtype=np.float64) if op == "leaf" else np.asarray(value, dtype=np.float64)
        if v.ndim == 0:
            v = v.reshape(1, 1)
        elif v.ndim == 1:
            v = v.reshape(-1, 1)
        if v.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got shape {v.shape}")
        if not np.isfinite(v).all():
            raise NonFiniteError(f"non-finite value produced by {op!r}")
        self.value = v
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(v) if requires_grad and op == "leaf" else None
        self.op = op
        self.parents = parents
        self._vjp = vjp

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def detach(self) -> "Tensor":
        return Tensor(self.value)

    def backward(self) -> None:
        backward(self)

    def numpy(self) -> np.ndarray:
        return self.value.copy()

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


_grad_enabled = True


@contextmanager
def no_grad():
    """Evaluate without recording the computation graph."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


def _result(value, op, parents, vjp) -> Tensor:
    if not _grad_enabled or not any(p.requires_grad for p in parents):
        return Tensor(value, op=op)
    return Tensor(value, requires_grad=True, op=op, parents=parents, vjp=vjp)


def _topological(root: Tensor) -> list[Tensor]:
    order, seen = [], {id(root)}
    stack = [(root, iter(root.parents))]
    while stack:
        node, it = stack[-1]
        for p in it:
            if p.requires_grad and id(p) not in seen:
                seen.add(id(p))
                stack.append((p, iter(p.parents)))
                break
        else:
            stack.pop()
            order.append(node)
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``."""
    if loss.shape != (1, 1):
        raise ShapeError(f"backward needs a 1x1 loss, got {loss.shape}")
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones((1, 1))}
    for node in reversed(_topological(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.op == "leaf":
            node.grad += g
            continue
        for parent, pg in zip(node.parents, node._vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg


# -- decision recording ---------------------------------------------------
# Gradient checks must avoid ReLU kinks and top-k boundary changes; ops that
# make discrete decisions log them here while a recorder is active.

_recorders: list[list] = []


@contextmanager
def record_decisions():
    log: list = []
    _recorders.append(log)
    try:
        yield log
    finally:
        _recorders.remove(log)


def log_decision(tag: str, payload: np.ndarray) -> None:
    for log in _recorders:
        log.append((tag, np.array(payload, copy=True)))


# -- elementwise and linear algebra ---------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul {a.shape} @ {b.shape}")
    av, bv = a.value, b.value
    return _result(av @ bv, "matmul", (a, b), lambda g: (g @ bv.T, av.T @ g))


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"add {a.shape} + {b.shape}")
    return _result(a.value + b.value, "add", (a, b), lambda g: (g, g))


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """``x + bias`` with a ``1 x F`` bias row repeated over the rows of ``x``."""
    x, bias = as_tensor(x), as_tensor(bias)
    if bias.shape != (1, x.shape[1]):
        raise ShapeError(f"bias {bias.shape} for input {x.shape}")
    return _result(x.value + bias.value, "add_bias", (x, bias), lambda g: (g, g.sum(axis=0, keepdims=True)))


def scale(x: Tensor, c: float) -> Tensor:
    x = as_tensor(x)
    c = float(c)
    return _result(x.value * c, "scale", (x,), lambda g: (g * c,))


def mul_col(x: Tensor, z: Tensor) -> Tensor:
    """Multiply row ``i`` of ``x`` by the scalar ``z[i, 0]``."""
    x, z = as_tensor(x), as_tensor(z)
    if z.shape != (x.shape[0], 1):
        raise ShapeError(f"column multiplier {z.shape} for input {x.shape}")
    xv, zv = x.value, z.value
    return _result(
        xv * zv,
        "mul_col",
        (x, z),
        lambda g: (g * zv, (g * xv).sum(axis=1, keepdims=True)),
    )


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    mask = x.value > 0
    log_decision("relu", mask)
    return _result(np.where(mask, x.value, 0.0), "relu", (x,), lambda g: (g * mask,))


def tanh(x: Tensor) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.value)
    return _result(y, "tanh", (x,), lambda g: (g * (1.0 - y * y),))


def identity(x: Tensor) -> Tensor:
    return as_tensor(x)


def softmax_rows(x: Tensor) -> Tensor:
    x = as_tensor(x)
    e = np.exp(x.value - x.value.max(axis=1, keepdims=True))
    y = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return _result(y, "softmax_rows", (x,), vjp)


def concat_cols(xs) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    if len({x.shape[0] for x in xs}) != 1:
        raise ShapeError("concat_cols operands differ in row count")
    bounds = np.cumsum([0] + [x.shape[1] for x in xs])
    value = np.concatenate([x.value for x in xs], axis=1)
    return _result(
        value,
        "concat_cols",
        tuple(xs),
        lambda g: tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(xs))),
    )


def gather_rows(x: Tensor, idx) -> Tensor:
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64).ravel()
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise ShapeError(f"row index outside [0, {x.shape[0]})")
    n = x.shape[0]

    def vjp(g):
        out = np.zeros((n, g.shape[1]))
        np.add.at(out, idx, g)
        return (out,)

    return _result(x.value[idx], "gather_rows", (x,), vjp)


def sum_all(x: Tensor) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    return _result(x.value.sum().reshape(1, 1), "sum_all", (x,), lambda g: (np.full(shape, g[0, 0]),))


def unit_col(p: Tensor) -> Tensor:
    """``p / ||p||_2`` for an ``F x 1`` column."""
    p = as_tensor(p)
    norm = float(np.sqrt((p.value ** 2).sum()))
    if norm == 0.0:
        raise ZeroDivisionError("cannot normalize a zero vector")
    u = p.value / norm
    return _result(u, "unit_col", (p,), lambda g: ((g - u * (u * g).sum()) / norm,))


# -- sparse and segment ops -----------------------------------------------

class OpCounter:
    """Counts multiply-adds issued by :func:`spmm` while active."""

    active: "OpCounter | None" = None

    def __init__(self):
        self.flops = 0

    def __enter__(self):
        OpCounter.active = self
        return self

    def __exit__(self, *exc):
        OpCounter.active = None


def spmm(s, x: Tensor) -> Tensor:
    """Sparse CSR matrix times dense tensor. Gradient flows to ``x`` only."""
    x = as_tensor(x)
    if s.n != x.shape[0]:
        raise ShapeError(f"sparse {s.n}x{s.n} @ dense {x.shape}")
    if OpCounter.active is not None:
        OpCounter.active.flops += s.nnz * x.shape[1]
    value = s.matmul(x.value)
    # normalized adjacencies are symmetric, so S^T = S
    st = s if isinstance(s, NormalizedAdjacency) else None

    def vjp(g):
        t = st if st is not None else s.transpose()
        return (t.matmul(g),)

    return _result(value, "spmm", (x,), vjp)


def segment_offsets(indicator, num_segments: int) -> np.ndarray:
    indicator = np.asarray(indicator, dtype=np.int64).ravel()
    if indicator.size and (np.any(np.diff(indicator) < 0) or indicator[0] < 0 or indicator[-1] >= num_segments):
        raise SegmentError("indicator must be non-decreasing with values in [0, num_segments)")
    counts = np.bincount(indicator, minlength=num_segments)
    if np.any(counts == 0):
        raise SegmentError(f"empty segment(s): {np.flatnonzero(counts == 0).tolist()}")
    offsets = np.zeros(num_segments + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return offsets


def segment_mean(x: Tensor, indicator, num_segments: int) -> Tensor:
    x = as_tensor(x)
    offsets = segment_offsets(indicator, num_segments)
    if offsets[-1] != x.shape[0]:
        raise ShapeError("indicator length differs from row count")
    counts = np.diff(offsets).astype(np.float64)[:, None]
    value = _kernels.segment_sum(x.value, offsets) / counts
    seg = np.repeat(np.arange(num_segments), np.diff(offsets))
    return _result(value, "segment_mean", (x,), lambda g: ((g / counts)[seg],))


def segment_max(x: Tensor, indicator, num_segments: int) -> Tensor:
    """Column-wise maximum per segment; ties route gradient to the lowest row."""
    x = as_tensor(x)
    offsets = segment_offsets(indicator, num_segments)
    if offsets[-1] != x.shape[0]:
        raise ShapeError("indicator length differs from row count")
    value, argmax = _kernels.segment_max(x.value, offsets)
    n, cols = x.shape[0], np.arange(x.shape[1])

    def vjp(g):
        out = np.zeros((n, g.shape[1]))
        out[argmax, cols[None, :]] = g
        return (out,)

    return _result(value, "segment_max", (x,), vjp)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under row-softmax of ``logits``."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64).ravel()
    b, c = logits.shape
    if labels.shape[0] != b:
        raise ShapeError(f"{labels.shape[0]} labels for {b} rows")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"label outside [0, {c})")
    z = logits.value - logits.value.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_p = z - log_norm
    rows = np.arange(b)
    loss = -log_p[rows, labels].mean()

    def vjp(g):
        d = np.exp(log_p)
        d[rows, labels] -= 1.0
        return (d * (g[0, 0] / b),)

    return _result(np.array([[loss]]), "cross_entropy", (logits,), vjp)
