"""Reverse-mode automatic differentiation over a closed operation set.

Every differentiable computation in the package (contrastive alignment,
PPO surrogates, forward-model and distillation losses) is expressed with
the operations defined here. Each op works in two modes:

* plain mode: all inputs are numpy arrays, the result is a numpy array,
  nothing is recorded. This is the fast path used during rollouts.
* graph mode: at least one input is a ``Node``; the result is a ``Node``
  holding the value plus a backward closure. Calling ``backward`` on a
  scalar output accumulates gradients into every leaf.

Values are float64 throughout. Graph mode validates finiteness after
every op so a diverging loss fails at the first offending node instead
of propagating NaNs.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np


class NonFiniteError(ArithmeticError):
    """Raised when an op produces NaN or Inf in graph mode."""


class Node:
    """One value in the computation graph.

    ``grad`` is populated by ``backward`` and has the same shape as
    ``value``. Leaves are Nodes created directly from arrays.
    """

    __slots__ = ("value", "parents", "_backward", "grad")

    def __init__(self, value, parents=(), backward=None, op="leaf"):
        self.value = np.asarray(value, dtype=np.float64)
        if not np.isfinite(self.value).all():
            raise NonFiniteError(f"non-finite value produced by op '{op}'")
        self.parents = parents
        self._backward = backward
        self.grad = None

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(shape={self.value.shape})"


def is_node(x) -> bool:
    return isinstance(x, Node)


def _any_node(*xs) -> bool:
    return any(isinstance(x, Node) for x in xs)


def as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def _val(x):
    return x.value if isinstance(x, Node) else np.asarray(x, dtype=np.float64)


def _acc(node: Node, g):
    if node.grad is None:
        node.grad = np.zeros_like(node.value)
    node.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape``, undoing numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def backward(out: Node) -> None:
    """Accumulate gradients of the scalar ``out`` into all its leaves."""
    if out.value.size != 1:
        raise ValueError(f"backward requires a scalar output, got shape {out.value.shape}")
    # Iterative topological sort; graphs can be a few thousand nodes deep.
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(out, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    out.grad = np.ones_like(out.value)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# elementwise / arithmetic ops


def add(a, b):
    if not _any_node(a, b):
        return _val(a) + _val(b)
    a, b = as_node(a), as_node(b)
    out = Node(a.value + b.value, (a, b), op="add")

    def bwd(g):
        _acc(a, _unbroadcast(g, a.value.shape))
        _acc(b, _unbroadcast(g, b.value.shape))

    out._backward = bwd
    return out


def sub(a, b):
    if not _any_node(a, b):
        return _val(a) - _val(b)
    a, b = as_node(a), as_node(b)
    out = Node(a.value - b.value, (a, b), op="sub")

    def bwd(g):
        _acc(a, _unbroadcast(g, a.value.shape))
        _acc(b, _unbroadcast(-g, b.value.shape))

    out._backward = bwd
    return out


def mul(a, b):
    if not _any_node(a, b):
        return _val(a) * _val(b)
    a, b = as_node(a), as_node(b)
    out = Node(a.value * b.value, (a, b), op="mul")

    def bwd(g):
        _acc(a, _unbroadcast(g * b.value, a.value.shape))
        _acc(b, _unbroadcast(g * a.value, b.value.shape))

    out._backward = bwd
    return out


def neg(a):
    if not is_node(a):
        return -_val(a)
    out = Node(-a.value, (a,), op="neg")
    out._backward = lambda g: _acc(a, -g)
    return out


def matmul(a, b):
    if not _any_node(a, b):
        return _val(a) @ _val(b)
    a, b = as_node(a), as_node(b)
    out = Node(a.value @ b.value, (a, b), op="matmul")

    def bwd(g):
        _acc(a, g @ b.value.T)
        _acc(b, a.value.T @ g)

    out._backward = bwd
    return out


def relu(a):
    if not is_node(a):
        return np.maximum(_val(a), 0.0)
    out = Node(np.maximum(a.value, 0.0), (a,), op="relu")
    out._backward = lambda g: _acc(a, g * (a.value > 0.0))
    return out


def tanh(a):
    if not is_node(a):
        return np.tanh(_val(a))
    t = np.tanh(a.value)
    out = Node(t, (a,), op="tanh")
    out._backward = lambda g: _acc(a, g * (1.0 - t * t))
    return out


def exp(a):
    if not is_node(a):
        return np.exp(_val(a))
    e = np.exp(a.value)
    out = Node(e, (a,), op="exp")
    out._backward = lambda g: _acc(a, g * e)
    return out


def log(a):
    if not is_node(a):
        return np.log(_val(a))
    with np.errstate(invalid="ignore", divide="ignore"):
        val = np.log(a.value)
    out = Node(val, (a,), op="log")
    out._backward = lambda g: _acc(a, g / a.value)
    return out


def square(a):
    if not is_node(a):
        v = _val(a)
        return v * v
    out = Node(a.value * a.value, (a,), op="square")
    out._backward = lambda g: _acc(a, 2.0 * g * a.value)
    return out


def clip(a, lo: float, hi: float):
    """Clamp to [lo, hi]; gradient passes through strictly inside the bounds."""
    if not is_node(a):
        return np.clip(_val(a), lo, hi)
    out = Node(np.clip(a.value, lo, hi), (a,), op="clip")
    out._backward = lambda g: _acc(a, g * ((a.value > lo) & (a.value < hi)))
    return out


def minimum(a, b):
    if not _any_node(a, b):
        return np.minimum(_val(a), _val(b))
    a, b = as_node(a), as_node(b)
    out = Node(np.minimum(a.value, b.value), (a, b), op="minimum")

    def bwd(g):
        take_a = a.value <= b.value
        _acc(a, _unbroadcast(g * take_a, a.value.shape))
        _acc(b, _unbroadcast(g * ~take_a, b.value.shape))

    out._backward = bwd
    return out


# ---------------------------------------------------------------------------
# reductions


def sum_(a, axis=None, keepdims=False):
    if not is_node(a):
        return _val(a).sum(axis=axis, keepdims=keepdims)
    out = Node(a.value.sum(axis=axis, keepdims=keepdims), (a,), op="sum")

    def bwd(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _acc(a, np.broadcast_to(g, a.value.shape).copy())

    out._backward = bwd
    return out


def mean(a, axis=None, keepdims=False):
    n = _val(a).size if axis is None else _val(a).shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


# ---------------------------------------------------------------------------
# row-wise softmax machinery (last axis)


def softmax(a):
    """Row-wise softmax over the last axis, stabilized by max subtraction."""
    if not is_node(a):
        v = _val(a)
        z = v - v.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)
    z = a.value - a.value.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)
    out = Node(s, (a,), op="softmax")

    def bwd(g):
        _acc(a, s * (g - (g * s).sum(axis=-1, keepdims=True)))

    out._backward = bwd
    return out


def logsumexp(a, keepdims=False):
    """Row-wise log-sum-exp over the last axis, stabilized."""
    if not is_node(a):
        v = _val(a)
        m = v.max(axis=-1, keepdims=True)
        out = m + np.log(np.exp(v - m).sum(axis=-1, keepdims=True))
        return out if keepdims else out.squeeze(-1)
    m = a.value.max(axis=-1, keepdims=True)
    e = np.exp(a.value - m)
    tot = e.sum(axis=-1, keepdims=True)
    val = m + np.log(tot)
    if not keepdims:
        val = val.squeeze(-1)
    out = Node(val, (a,), op="logsumexp")
    soft = e / tot

    def bwd(g):
        g = np.asarray(g)
        if not keepdims:
            g = np.expand_dims(g, -1)
        _acc(a, soft * g)

    out._backward = bwd
    return out


# ---------------------------------------------------------------------------
# indexing / shaping


def take(a, idx):
    """1-D gather: out[k] = a[idx[k]]."""
    idx = np.asarray(idx, dtype=np.intp)
    if not is_node(a):
        return _val(a)[idx]
    out = Node(a.value[idx], (a,), op="take")

    def bwd(g):
        acc = np.zeros_like(a.value)
        np.add.at(acc, idx, g)
        _acc(a, acc)

    out._backward = bwd
    return out


def gather2d(a, rows, cols):
    """Elementwise gather from a matrix: out[k] = a[rows[k], cols[k]]."""
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    if not is_node(a):
        return _val(a)[rows, cols]
    out = Node(a.value[rows, cols], (a,), op="gather2d")

    def bwd(g):
        acc = np.zeros_like(a.value)
        np.add.at(acc, (rows, cols), g)
        _acc(a, acc)

    out._backward = bwd
    return out


def concat(parts: Sequence, axis=0):
    if not any(is_node(p) for p in parts):
        return np.concatenate([_val(p) for p in parts], axis=axis)
    nodes = [as_node(p) for p in parts]
    out = Node(np.concatenate([n.value for n in nodes], axis=axis), tuple(nodes), op="concat")
    sizes = [n.value.shape[axis] for n in nodes]

    def bwd(g):
        offset = 0
        for n, size in zip(nodes, sizes):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offset, offset + size)
            _acc(n, g[tuple(sl)])
            offset += size

    out._backward = bwd
    return out


# ---------------------------------------------------------------------------
# cosine similarity

ZERO_NORM_EPS = 1e-12


def pairwise_cosine(a, b):
    """Cosine similarity matrix between the rows of ``a`` and ``b``.

    Rows with norm below ``ZERO_NORM_EPS`` are treated as having
    similarity 0 to everything and receive zero gradient (cosine is
    undefined at the origin).
    """
    av, bv = _val(a), _val(b)
    na = np.linalg.norm(av, axis=1)
    nb = np.linalg.norm(bv, axis=1)
    ok_a = na >= ZERO_NORM_EPS
    ok_b = nb >= ZERO_NORM_EPS
    safe_a = np.where(ok_a, na, 1.0)
    safe_b = np.where(ok_b, nb, 1.0)
    ah = (av * ok_a[:, None]) / safe_a[:, None]
    bh = (bv * ok_b[:, None]) / safe_b[:, None]
    sims = ah @ bh.T
    if not _any_node(a, b):
        return sims
    a, b = as_node(a), as_node(b)
    out = Node(sims, (a, b), op="pairwise_cosine")

    def bwd(g):
        # d sims[i,j] / d a[i] = (bh[j] - sims[i,j] * ah[i]) / na[i]
        ga = (g @ bh - (g * sims).sum(axis=1, keepdims=True) * ah) / safe_a[:, None]
        gb = (g.T @ ah - (g * sims).sum(axis=0)[:, None] * bh) / safe_b[:, None]
        _acc(a, ga * ok_a[:, None])
        _acc(b, gb * ok_b[:, None])

    out._backward = bwd
    return out
