"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Values are numpy arrays of rank 0, 1 or 2.  Every operation returns a new
:class:`Node` holding its value, its parents and a vector-Jacobian product
closure.  :func:`backward` walks the graph once in reverse topological order
and accumulates adjoints (summing on fan-out).

Operands that are not nodes are wrapped as constants.  Graph recording is
skipped for nodes that do not depend on any trainable leaf, and entirely
inside a :func:`no_grad` block.
"""

import contextlib
import contextvars

import numpy as np
import scipy.linalg as sla
from scipy.linalg import lapack

from .errors import NotPositiveDefinite, ShapeError

__all__ = [
    "Node", "Parameter", "as_node", "no_grad", "backward", "grad",
    "add", "sub", "mul", "div", "neg", "matmul", "transpose",
    "exp", "log", "tanh", "square", "sqrt", "clip",
    "sum", "mean", "sum_squares",
    "cholesky", "solve_triangular", "logdet", "inv_quad",
    "column", "concat", "stack",
]

_RECORDING = contextvars.ContextVar("stradiff_recording", default=True)


@contextlib.contextmanager
def no_grad():
    """Evaluate operations without recording a graph."""
    token = _RECORDING.set(False)
    try:
        yield
    finally:
        _RECORDING.reset(token)


class Node:
    """A value in the computation graph."""

    __slots__ = ("value", "parents", "vjp", "requires_grad", "name", "cache", "__weakref__")
    __array_ufunc__ = None

    def __init__(self, value, parents=(), vjp=None, requires_grad=False, name=None):
        value = np.asarray(value, dtype=np.float64)
        if value.ndim > 2:
            raise ShapeError(f"tensors are limited to rank 2, got shape {value.shape}")
        self.value = value
        self.parents = parents
        self.vjp = vjp
        self.requires_grad = requires_grad
        self.name = name
        self.cache = {}

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def T(self):
        return transpose(self)

    def item(self):
        return float(self.value)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"<Node{label} shape={self.shape}>"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)


class Parameter(Node):
    """A trainable leaf with Adam moment buffers."""

    __slots__ = ("m", "v")

    def __init__(self, value, name):
        super().__init__(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self.m = np.zeros_like(self.value)
        self.v = np.zeros_like(self.value)


def as_node(x):
    return x if isinstance(x, Node) else Node(x)


def _record(value, parents, vjp):
    if _RECORDING.get() and any(p.requires_grad for p in parents):
        return Node(value, parents, vjp, requires_grad=True)
    return Node(value)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(a, b, opname):
    sa, sb = a.shape, b.shape
    if sa == sb or a.value.size == 1 or b.value.size == 1:
        return
    try:
        np.broadcast_shapes(sa, sb)
    except ValueError:
        raise ShapeError(f"{opname}: incompatible shapes {sa} and {sb}") from None


# -- elementwise -----------------------------------------------------------

def add(a, b):
    a, b = as_node(a), as_node(b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return _record(a.value + b.value, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    a, b = as_node(a), as_node(b)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _record(a.value - b.value, (a, b),
                   lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b):
    a, b = as_node(a), as_node(b)
    _check_broadcast(a, b, "mul")
    av, bv = a.value, b.value

    def vjp(g):
        ga = _unbroadcast(g * bv, av.shape) if a.requires_grad else None
        gb = _unbroadcast(g * av, bv.shape) if b.requires_grad else None
        return ga, gb

    return _record(av * bv, (a, b), vjp)


def div(a, b):
    a, b = as_node(a), as_node(b)
    _check_broadcast(a, b, "div")
    av, bv = a.value, b.value
    out = av / bv

    def vjp(g):
        ga = _unbroadcast(g / bv, av.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / bv, bv.shape) if b.requires_grad else None
        return ga, gb

    return _record(out, (a, b), vjp)


def neg(a):
    a = as_node(a)
    return _record(-a.value, (a,), lambda g: (-g,))


def exp(a):
    a = as_node(a)
    out = np.exp(a.value)
    return _record(out, (a,), lambda g: (g * out,))


def log(a):
    a = as_node(a)
    av = a.value
    return _record(np.log(av), (a,), lambda g: (g / av,))


def tanh(a):
    a = as_node(a)
    out = np.tanh(a.value)
    return _record(out, (a,), lambda g: (g * (1.0 - out * out),))


def square(a):
    a = as_node(a)
    av = a.value
    return _record(av * av, (a,), lambda g: (2.0 * g * av,))


def sqrt(a):
    a = as_node(a)
    out = np.sqrt(a.value)
    return _record(out, (a,), lambda g: (0.5 * g / out,))


def clip(a, lo, hi):
    """Clamp into ``[lo, hi]``; the gradient is zero where the clamp is active."""
    a = as_node(a)
    av = a.value
    inside = (av >= lo) & (av <= hi)
    return _record(np.clip(av, lo, hi), (a,), lambda g: (g * inside,))


# -- linear algebra --------------------------------------------------------

def matmul(a, b):
    a, b = as_node(a), as_node(b)
    av, bv = a.value, b.value
    if av.ndim == 0 or bv.ndim == 0:
        raise ShapeError("matmul: scalar operand, use mul")
    if av.shape[-1] != bv.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {av.shape} @ {bv.shape}")

    def vjp(g):
        ga = gb = None
        if a.requires_grad:
            if bv.ndim == 1:
                ga = np.multiply.outer(g, bv) if av.ndim == 2 else g * bv
            else:
                ga = g @ bv.T
        if b.requires_grad:
            if av.ndim == 1:
                gb = np.multiply.outer(av, g) if bv.ndim == 2 else g * av
            else:
                gb = av.T @ g
        return ga, gb

    return _record(av @ bv, (a, b), vjp)


def transpose(a):
    a = as_node(a)
    return _record(a.value.T, (a,), lambda g: (g.T,))


def _cholesky_factor(K):
    """Lower Cholesky factor of ``K.value``, cached on the node."""
    L = K.cache.get("chol")
    if L is None:
        kv = K.value
        if kv.ndim != 2 or kv.shape[0] != kv.shape[1]:
            raise ShapeError(f"expected a square matrix, got shape {kv.shape}")
        c, info = lapack.dpotrf(kv, lower=1, clean=1)
        if info > 0:
            raise NotPositiveDefinite(info - 1)
        if info < 0:
            raise ValueError(f"dpotrf: illegal argument {-info}")
        L = c
        K.cache["chol"] = L
    return L


def _spd_inverse(L):
    inv, info = lapack.dpotri(L, lower=1)
    if info != 0:
        raise NotPositiveDefinite(max(info - 1, 0))
    inv = np.tril(inv)
    return inv + np.tril(inv, -1).T


def cholesky(K):
    """Lower-triangular ``L`` with ``L @ L.T == K`` (no pivoting)."""
    K = as_node(K)
    L = _cholesky_factor(K)

    def vjp(gL):
        # P = Phi(L^T gL), S = L^-T P L^-1, symmetrized
        P = np.tril(L.T @ np.tril(gL))
        P[np.diag_indices_from(P)] *= 0.5
        S = sla.solve_triangular(L, P, lower=True, trans=1)
        S = sla.solve_triangular(L, S.T, lower=True, trans=1).T
        return (0.5 * (S + S.T),)

    return _record(L, (K,), vjp)


def solve_triangular(L, b, lower=True):
    """Solve ``L x = b`` for triangular ``L``."""
    L, b = as_node(L), as_node(b)
    Lv, bv = L.value, b.value
    if Lv.ndim != 2 or Lv.shape[0] != Lv.shape[1] or bv.shape[0] != Lv.shape[0]:
        raise ShapeError(f"solve_triangular: shapes {Lv.shape} and {bv.shape}")
    x = sla.solve_triangular(Lv, bv, lower=lower)
    mask = np.tril if lower else np.triu

    def vjp(g):
        gb = sla.solve_triangular(Lv, g, lower=lower, trans=1)
        gL = None
        if L.requires_grad:
            gL = -mask(np.multiply.outer(gb, x) if x.ndim == 1 else gb @ x.T)
        return gL, gb

    return _record(x, (L, b), vjp)


def logdet(K):
    """``log|K|`` of a symmetric positive-definite matrix, via Cholesky."""
    K = as_node(K)
    L = _cholesky_factor(K)
    value = 2.0 * np.sum(np.log(np.diag(L)))

    def vjp(g):
        return (g * _spd_inverse(L),)

    return _record(value, (K,), vjp)


def inv_quad(K, b):
    """``b^T K^{-1} b`` (summed over columns of ``b``) for SPD ``K``.

    The forward value is ``||L^{-1} b||^2`` from one triangular solve on the
    cached factor; the adjoint needs only ``K^{-1} b``.
    """
    K, b = as_node(K), as_node(b)
    L = _cholesky_factor(K)
    bv = b.value
    if bv.shape[0] != L.shape[0]:
        raise ShapeError(f"inv_quad: {K.shape} against {bv.shape}")
    u = sla.solve_triangular(L, bv, lower=True)
    value = np.sum(u * u)

    def vjp(g):
        alpha = sla.solve_triangular(L, u, lower=True, trans=1)
        gK = None
        if K.requires_grad:
            outer = np.multiply.outer(alpha, alpha) if alpha.ndim == 1 else alpha @ alpha.T
            gK = -g * outer
        return gK, 2.0 * g * alpha

    return _record(value, (K, b), vjp)


# -- reductions and structure ----------------------------------------------

def sum(a, axis=None):
    a = as_node(a)
    shape = a.shape

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _record(np.sum(a.value, axis=axis), (a,), vjp)


def mean(a, axis=None):
    a = as_node(a)
    count = a.value.size if axis is None else a.shape[axis]
    return sum(a, axis=axis) * (1.0 / count)


def sum_squares(a):
    """Squared Frobenius norm."""
    a = as_node(a)
    av = a.value
    return _record(np.sum(av * av), (a,), lambda g: (2.0 * g * av,))


def column(a, j):
    a = as_node(a)
    if a.ndim != 2:
        raise ShapeError(f"column: expected a matrix, got shape {a.shape}")
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        out[:, j] = g
        return (out,)

    return _record(a.value[:, j].copy(), (a,), vjp)


def concat(nodes, axis=0):
    nodes = [as_node(n) for n in nodes]
    try:
        value = np.concatenate([n.value for n in nodes], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from None
    bounds = np.cumsum([n.shape[axis] for n in nodes])[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _record(value, tuple(nodes), vjp)


def stack(nodes, axis=1):
    """Stack equal-length vectors into a matrix (``axis=1`` gives columns)."""
    nodes = [as_node(n) for n in nodes]
    if any(n.ndim != 1 or n.shape != nodes[0].shape for n in nodes):
        raise ShapeError("stack: expects vectors of equal length")
    value = np.stack([n.value for n in nodes], axis=axis)

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(nodes)))

    return _record(value, tuple(nodes), vjp)


# -- reverse pass ----------------------------------------------------------

def _topological_order(root):
    order, seen = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order


def _adjoints(root):
    if root.value.size != 1 or root.ndim != 0:
        raise ShapeError(f"backward needs a scalar root, got shape {root.shape}")
    adj = {id(root): np.ones(())}
    for node in reversed(_topological_order(root)):
        g = adj.get(id(node))
        if g is None or node.vjp is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in adj:
                adj[key] = adj[key] + pg
            else:
                adj[key] = pg
    return adj


def grad(root, wrt):
    """Gradients of scalar ``root`` with respect to each node in ``wrt``."""
    adj = _adjoints(root)
    return [np.array(adj.get(id(n), np.zeros(n.shape)), dtype=np.float64).reshape(n.shape)
            for n in wrt]


def backward(root, params=None):
    """Return ``{parameter: d root / d parameter}``.

    With ``params`` given, every listed parameter appears in the result and
    unreachable ones get zeros.  Otherwise all reachable parameters are
    returned.
    """
    if params is None:
        params = [n for n in _topological_order(root) if isinstance(n, Parameter)]
    return dict(zip(params, grad(root, params)))
