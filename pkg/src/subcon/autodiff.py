"""Minimal dense-tensor reverse-mode differentiation.

Values form an implicit tape: each op records its parents and a backward
closure, and backward() replays the records once in reverse topological
order. Everything is float64; ops raise on non-finite outputs so a bad
intermediate is reported at the op that produced it.
"""
from __future__ import annotations

import numpy as np
from scipy.special import expit


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class Value:
    __slots__ = ("data", "grad", "op", "_parents", "_backward",
                 "requires_grad")

    def __init__(self, data, parents=(), op="leaf", backward=None,
                 requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.op = op
        self._parents = tuple(parents)
        self._backward = backward
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Value(op={self.op!r}, shape={self.data.shape})"


def constant(data) -> Value:
    return Value(data, op="const")


def parameter(data) -> Value:
    return Value(np.array(data, dtype=np.float64), op="param",
                 requires_grad=True)


def _out(data, parents, op, backward) -> Value:
    data = np.asarray(data, dtype=np.float64)
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite output of op {op!r}")
    return Value(data, parents, op, backward)


def _acc(v: Value, g: np.ndarray) -> None:
    if v.grad is None:
        v.grad = np.zeros_like(v.data)
    v.grad += g


def add(a: Value, b: Value) -> Value:
    if a.shape != b.shape:
        raise ShapeError(f"add: {a.shape} vs {b.shape}")

    def back(g):
        _acc(a, g)
        _acc(b, g)
    return _out(a.data + b.data, (a, b), "add", back)


def sub(a: Value, b: Value) -> Value:
    if a.shape != b.shape:
        raise ShapeError(f"sub: {a.shape} vs {b.shape}")

    def back(g):
        _acc(a, g)
        _acc(b, -g)
    return _out(a.data - b.data, (a, b), "sub", back)


def mul(a: Value, b: Value) -> Value:
    if a.shape != b.shape:
        raise ShapeError(f"mul: {a.shape} vs {b.shape}")

    def back(g):
        _acc(a, g * b.data)
        _acc(b, g * a.data)
    return _out(a.data * b.data, (a, b), "mul", back)


def scale(a: Value, c: float) -> Value:
    c = float(c)

    def back(g):
        _acc(a, g * c)
    return _out(a.data * c, (a,), "scale", back)


def matmul(a: Value, b: Value) -> Value:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")

    def back(g):
        _acc(a, g @ b.data.T)
        _acc(b, a.data.T @ g)
    return _out(a.data @ b.data, (a, b), "matmul", back)


def spmm(sp, b: Value) -> Value:
    """Constant sparse matrix times dense Value."""
    if sp.shape[1] != b.shape[0]:
        raise ShapeError(f"spmm: {sp.shape} @ {b.shape}")

    def back(g):
        _acc(b, sp.T @ g)
    return _out(sp @ b.data, (b,), "spmm", back)


def add_bias(mat: Value, bias: Value) -> Value:
    if mat.data.ndim != 2 or bias.data.ndim != 1 or \
            mat.shape[1] != bias.shape[0]:
        raise ShapeError(f"add_bias: {mat.shape} + {bias.shape}")

    def back(g):
        _acc(mat, g)
        _acc(bias, g.sum(axis=0))
    return _out(mat.data + bias.data[None, :], (mat, bias), "add_bias", back)


def prelu(x: Value, slope: Value) -> Value:
    """Elementwise PReLU with a single learned scalar slope."""
    if slope.data.shape != ():
        raise ShapeError("prelu slope must be a scalar")
    neg = x.data < 0

    def back(g):
        _acc(x, g * np.where(neg, slope.data, 1.0))
        _acc(slope, np.sum(g * np.where(neg, x.data, 0.0)))
    out = np.where(neg, slope.data * x.data, x.data)
    return _out(out, (x, slope), "prelu", back)


def sigmoid(x: Value) -> Value:
    y = expit(x.data)

    def back(g):
        _acc(x, g * y * (1.0 - y))
    return _out(y, (x,), "sigmoid", back)


def l2_normalize_rows(x: Value) -> Value:
    if x.data.ndim != 2:
        raise ShapeError("l2_normalize_rows expects a matrix")
    norms = np.sqrt((x.data ** 2).sum(axis=1))
    safe = np.where(norms > 0, norms, 1.0)
    y = x.data / safe[:, None]

    def back(g):
        dots = (g * y).sum(axis=1)
        _acc(x, (g - y * dots[:, None]) / safe[:, None])
    return _out(y, (x,), "l2_normalize_rows", back)


def row_weighted_sum(weights: np.ndarray, x: Value) -> Value:
    """weights @ x for a constant weight vector; returns a length-F vector."""
    weights = np.asarray(weights, dtype=np.float64)
    if x.data.ndim != 2 or weights.shape != (x.shape[0],):
        raise ShapeError(f"row_weighted_sum: {weights.shape} vs {x.shape}")

    def back(g):
        _acc(x, np.outer(weights, g))
    return _out(weights @ x.data, (x,), "row_weighted_sum", back)


def dot_products_matrix(h: Value) -> Value:
    """Pairwise similarity H @ H.T."""
    if h.data.ndim != 2:
        raise ShapeError("dot_products_matrix expects a matrix")

    def back(g):
        _acc(h, (g + g.T) @ h.data)
    return _out(h.data @ h.data.T, (h,), "dot_products_matrix", back)


def log_sum_exp(x: Value, mask: np.ndarray) -> Value:
    """Row-wise log-sum-exp over masked entries, stable via max subtraction."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape or x.data.ndim != 2:
        raise ShapeError("log_sum_exp mask must match a matrix input")
    if not mask.any(axis=1).all():
        raise ValueError("log_sum_exp: every row needs a masked-in entry")
    neg_inf = np.where(mask, x.data, -np.inf)
    m = neg_inf.max(axis=1)
    out = m + np.log(np.exp(neg_inf - m[:, None]).sum(axis=1))

    def back(g):
        p = np.where(mask, np.exp(x.data - out[:, None]), 0.0)
        _acc(x, p * g[:, None])
    return _out(out, (x,), "log_sum_exp", back)


def gather_rows(x: Value, idx) -> Value:
    idx = np.asarray(idx, dtype=np.int64)

    def back(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        _acc(x, full)
    return _out(x.data[idx], (x,), "gather_rows", back)


def row(x: Value, i: int) -> Value:
    """Single row of a matrix as a 1-D vector."""

    def back(g):
        full = np.zeros_like(x.data)
        full[i] += g
        _acc(x, full)
    return _out(x.data[i], (x,), "row", back)


def vstack(values) -> Value:
    """Stack 1-D rows and 2-D blocks into a single matrix."""
    values = list(values)
    blocks = [v.data if v.data.ndim == 2 else v.data[None, :] for v in values]
    offsets = np.cumsum([0] + [b.shape[0] for b in blocks])

    def back(g):
        for v, lo, hi in zip(values, offsets[:-1], offsets[1:]):
            piece = g[lo:hi]
            _acc(v, piece if v.data.ndim == 2 else piece[0])
    return _out(np.concatenate(blocks, axis=0), tuple(values), "vstack", back)


def sum_all(x: Value) -> Value:
    def back(g):
        _acc(x, np.full_like(x.data, float(g)))
    return _out(x.data.sum(), (x,), "sum_all", back)


def weighted_sum(x: Value, w: np.ndarray) -> Value:
    """sum(w * x) for a constant weight array of the same shape."""
    w = np.asarray(w, dtype=np.float64)
    if w.shape != x.shape:
        raise ShapeError(f"weighted_sum: {w.shape} vs {x.shape}")

    def back(g):
        _acc(x, w * float(g))
    return _out((w * x.data).sum(), (x,), "weighted_sum", back)


def backward(loss: Value) -> None:
    """Reverse-mode sweep from a scalar loss; gradients accumulate into
    .grad of every Value on the tape (zero-initialized on first touch)."""
    if loss.data.shape != ():
        raise ShapeError("backward requires a scalar loss")
    topo: list[Value] = []
    seen = set()
    stack: list[tuple[Value, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.ones((), dtype=np.float64)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def zero_grads(values) -> None:
    for v in values:
        v.zero_grad()
