"""Small reverse-mode automatic differentiation over float64 arrays.

A :class:`Tensor` wraps a numpy array and remembers the operation that
produced it. Calling :func:`backward` on a scalar walks the recorded graph in
reverse topological order and accumulates gradients into every leaf created
with ``requires_grad=True``.

Broadcasting is deliberately limited: elementwise ops require equal shapes,
except that a 1-d right operand of length ``n`` may be added to (or multiply)
every row of an ``m x n`` left operand, and a python scalar may be combined
with anything.
"""
from __future__ import annotations

import numpy as np

from .errors import DataError, DegenerateEmbeddingError, DimensionError

COSINE_NORM_FLOOR = 1e-12


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, op="leaf"):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = tuple(_parents)
        self._backward = _backward
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def is_leaf(self):
        return not self._parents

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data.copy()

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division is only supported by python scalars")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self):
        return mean(self)

    def relu(self):
        return relu(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward, op):
    needs = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=needs, _parents=parents if needs else (),
                  _backward=backward if needs else None, op=op)


def _row_broadcast(a, b, opname):
    """Return True when ``b`` is a bias row broadcast over the rows of ``a``."""
    if a.shape == b.shape:
        return False
    if a.ndim == 2 and b.ndim == 1 and b.shape[0] == a.shape[1]:
        return True
    raise DimensionError(f"{opname}: incompatible shapes {a.shape} and {b.shape}")


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim == 0 and a.ndim > 0:
        bias = False
        scalar = True
    else:
        scalar = False
        bias = _row_broadcast(a, b, "add")

    def backward(g):
        if scalar:
            return g, np.sum(g)
        return g, (g.sum(axis=0) if bias else g)

    return _make(a.data + b.data, (a, b), backward, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return add(a, mul(b, -1.0))


def mul(a, b):
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        c = float(b)

        def backward_scalar(g):
            return (g * c,)

        return _make(a.data * c, (a,), backward_scalar, "scale")
    bias = _row_broadcast(a, b, "mul")

    def backward(g):
        ga = g * b.data
        gb = g * a.data
        return ga, (gb.sum(axis=0) if bias else gb)

    return _make(a.data * b.data, (a, b), backward, "mul")


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return _make(a.data @ b.data, (a, b), backward, "matmul")


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0

    def backward(g):
        return (g * mask,)

    return _make(np.where(mask, x.data, 0.0), (x,), backward, "relu")


def exp(x):
    x = as_tensor(x)
    out = np.exp(x.data)

    def backward(g):
        return (g * out,)

    return _make(out, (x,), backward, "exp")


def log(x):
    x = as_tensor(x)

    def backward(g):
        return (g / x.data,)

    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x.data)
    return _make(out, (x,), backward, "log")


def tsum(x, axis=None):
    x = as_tensor(x)
    shape = x.shape
    if axis is None:
        def backward(g):
            return (np.broadcast_to(g, shape).copy(),)
    else:
        def backward(g):
            return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _make(np.sum(x.data, axis=axis), (x,), backward, "sum")


def mean(x):
    x = as_tensor(x)
    return mul(tsum(x), 1.0 / max(x.data.size, 1))


def diag(x):
    x = as_tensor(x)
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise DimensionError(f"diag: expected a square matrix, got {x.shape}")
    n = x.shape[0]

    def backward(g):
        out = np.zeros((n, n))
        out[np.arange(n), np.arange(n)] = g
        return (out,)

    return _make(np.diagonal(x.data).copy(), (x,), backward, "diag")


def softmax_rows(x):
    x = as_tensor(x)
    if x.ndim != 2:
        raise DimensionError(f"softmax_rows: expected a matrix, got {x.shape}")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        return (y * (g - np.sum(g * y, axis=1, keepdims=True)),)

    return _make(y, (x,), backward, "softmax_rows")


def take_rows(x, idx):
    """Select rows ``idx`` of a matrix; gradients scatter back additively."""
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.intp)
    shape = x.shape

    def backward(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _make(x.data[idx], (x,), backward, "take_rows")


def scatter_rows(x, idx, n_rows):
    """Place the rows of ``x`` at positions ``idx`` of an ``n_rows`` matrix of zeros."""
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.intp)
    if len(idx) != x.shape[0]:
        raise DimensionError(f"scatter_rows: {len(idx)} indices for {x.shape[0]} rows")
    out = np.zeros((n_rows,) + x.shape[1:])
    out[idx] = x.data

    def backward(g):
        return (g[idx],)

    return _make(out, (x,), backward, "scatter_rows")


def concat_rows(tensors):
    tensors = [as_tensor(t) for t in tensors]
    widths = {t.shape[1:] for t in tensors}
    if len(widths) != 1:
        raise DimensionError(f"concat_rows: mismatched trailing shapes {sorted(widths)}")
    bounds = np.cumsum([0] + [t.shape[0] for t in tensors])

    def backward(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(tensors)))

    return _make(np.concatenate([t.data for t in tensors], axis=0), tuple(tensors),
                 backward, "concat_rows")


def cosine_similarity(a, b):
    """All-pairs cosine similarity between the rows of ``a`` and ``b``.

    Entry ``(j, k)`` is ``<a_j, b_k> / (|a_j| |b_k|)``.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise DimensionError(f"cosine_similarity: incompatible shapes {a.shape} and {b.shape}")
    na = np.linalg.norm(a.data, axis=1, keepdims=True)
    nb = np.linalg.norm(b.data, axis=1, keepdims=True)
    if (na < COSINE_NORM_FLOOR).any() or (nb < COSINE_NORM_FLOOR).any():
        raise DegenerateEmbeddingError("cosine_similarity: embedding row with norm below 1e-12")
    an = a.data / na
    bn = b.data / nb

    def backward(g):
        gan = g @ bn
        gbn = g.T @ an
        ga = (gan - an * np.sum(gan * an, axis=1, keepdims=True)) / na
        gb = (gbn - bn * np.sum(gbn * bn, axis=1, keepdims=True)) / nb
        return ga, gb

    return _make(an @ bn.T, (a, b), backward, "cosine_similarity")


def batchnorm1d(x, gamma, beta, running_mean, running_var, training,
                momentum=0.1, eps=1e-5):
    """Batch normalisation over the rows of ``x``.

    In training mode the batch statistics are used and ``running_mean`` /
    ``running_var`` (plain arrays) are updated in place with the unbiased
    batch variance. In eval mode the running statistics are used.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim != 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise DimensionError(f"batchnorm1d: input {x.shape}, gamma {gamma.shape}, beta {beta.shape}")
    n = x.shape[0]
    if training:
        if n < 2:
            raise DataError("batchnorm1d: training mode needs at least 2 rows")
        mu = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * n / (n - 1)
    else:
        mu = running_mean.copy()
        var = running_var.copy()
    invstd = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * invstd

    def backward(g):
        gxhat = g * gamma.data
        if training:
            gx = invstd / n * (n * gxhat - gxhat.sum(axis=0) - xhat * np.sum(gxhat * xhat, axis=0))
        else:
            gx = gxhat * invstd
        return gx, np.sum(g * xhat, axis=0), g.sum(axis=0)

    return _make(gamma.data * xhat + beta.data, (x, gamma, beta), backward, "batchnorm1d")


def topological_order(root):
    """Nodes reachable from ``root`` that need gradients, parents before children."""
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss):
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    if loss.data.size != 1 or loss.ndim > 1:
        raise ValueError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
