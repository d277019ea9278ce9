"""Dense tensors with tape-based reverse-mode differentiation.

Every differentiable operation executed while gradient recording is enabled
appends a :class:`Node` to the tape (nodes carry a monotonically increasing
sequence number).  :func:`backward` replays the reachable part of the tape in
reverse execution order, visiting each node exactly once, and accumulates
gradients additively into leaf tensors.
"""
from __future__ import annotations

import contextlib
import itertools
import threading
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import expit

_seq = itertools.count()
_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


def _finite_check() -> bool:
    return getattr(_state, "check_finite", True)


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference mode)."""
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


@contextlib.contextmanager
def finite_checks(enabled: bool):
    prev = _finite_check()
    _state.check_finite = enabled
    try:
        yield
    finally:
        _state.check_finite = prev


class NonFiniteError(FloatingPointError):
    pass


class Node:
    """One recorded operation: parents, a backward closure, and a grad buffer."""

    __slots__ = ("seq", "parents", "backward_fn", "grad", "consumed", "name")

    def __init__(self, parents: tuple, backward_fn: Callable, name: str):
        self.seq = next(_seq)
        self.parents = parents
        self.backward_fn = backward_fn
        self.grad = None
        self.consumed = False
        self.name = name


# longdouble is accepted so finite-difference oracles can evaluate in extended precision
_FLOATS = (np.dtype(np.float32), np.dtype(np.float64), np.dtype(np.longdouble))


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_node", "no_decay", "__weakref__")

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOATS:
            arr = arr.astype(np.float64 if dtype is None else dtype)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._node: Optional[Node] = None
        self.no_decay = False

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # -- operator sugar -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def backward(self) -> None:
        backward(self)


def as_tensor(x, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _pair(a, b) -> tuple:
    if isinstance(a, Tensor):
        return a, as_tensor(b, a)
    return as_tensor(a, b), b


def _record(out: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, name: str) -> Tensor:
    if _finite_check() and not np.isfinite(out).all():
        raise NonFiniteError(f"non-finite values produced by {name}")
    t = Tensor(out)
    if _grad_enabled() and any(p.requires_grad for p in parents):
        t.requires_grad = True
        t._node = Node(tuple(parents), backward_fn, name)
    return t


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every leaf that ``loss`` depends on."""
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    root = loss._node
    if root is None:
        raise RuntimeError("nothing recorded on the tape for this tensor")
    if root.consumed:
        raise RuntimeError("tape already consumed by an earlier backward call")

    nodes = {}
    stack = [root]
    while stack:
        node = stack.pop()
        if node.seq in nodes:
            continue
        if node.consumed:
            raise RuntimeError("tape already consumed by an earlier backward call")
        nodes[node.seq] = node
        for p in node.parents:
            if p._node is not None and p._node.seq not in nodes:
                stack.append(p._node)

    root.grad = np.ones_like(loss.data)
    check = _finite_check()
    for seq in sorted(nodes, reverse=True):
        node = nodes[seq]
        g = node.grad
        if g is not None:
            parent_grads = node.backward_fn(g)
            for p, pg in zip(node.parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                if check and not np.isfinite(pg).all():
                    raise NonFiniteError(f"non-finite gradient in backward of {node.name}")
                if p._node is not None:
                    p._node.grad = pg if p._node.grad is None else p._node.grad + pg
                else:
                    p.grad = pg.copy() if p.grad is None else p.grad + pg
        node.grad = None
        node.backward_fn = None
        node.consumed = True


# ---------------------------------------------------------------------------
# elementwise and reduction ops
# ---------------------------------------------------------------------------

def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return _record(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return _record(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    b = as_tensor(b, a)
    ad, bd = a.data, b.data

    def bw(g):
        return (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(g * ad, bd.shape) if b.requires_grad else None)

    return _record(ad * bd, (a, b), bw, "mul")


def scale(x: Tensor, c: float) -> Tensor:
    return _record(x.data * c, (x,), lambda g: (g * c,), "scale")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _record(np.maximum(x.data, 0), (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    s = expit(x.data)
    return _record(s, (x,), lambda g: (g * s * (1 - s),), "sigmoid")


def abs_(x: Tensor) -> Tensor:
    sgn = np.sign(x.data)
    return _record(np.abs(x.data), (x,), lambda g: (g * sgn,), "abs")


def square(x: Tensor) -> Tensor:
    d = x.data
    return _record(d * d, (x,), lambda g: (2 * g * d,), "square")


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, x.ndim)
    shape = x.shape

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return _record(np.asarray(x.data.sum(axis=axes, keepdims=keepdims)), (x,), bw, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    shape = x.shape

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / n, shape).copy(),)

    return _record(np.asarray(x.data.mean(axis=axes, keepdims=keepdims)), (x,), bw, "mean")


def global_average_pool(x: Tensor) -> Tensor:
    """Mean over the trailing two (spatial) axes, kept as size-1 dims."""
    return mean(x, axis=(-2, -1), keepdims=True)


def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    return _record(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),), "reshape")


def transpose(x: Tensor, axes=()) -> Tensor:
    axes = tuple(axes) if axes else tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return _record(np.ascontiguousarray(x.data.transpose(axes)), (x,),
                   lambda g: (g.transpose(inv),), "transpose")


def getitem(x: Tensor, idx) -> Tensor:
    shape, dtype = x.shape, x.dtype

    def bw(g):
        out = np.zeros(shape, dtype=dtype)
        out[idx] = g
        return (out,)

    return _record(np.ascontiguousarray(x.data[idx]), (x,), bw, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _record(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw, "concat")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a)
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise ValueError("matmul needs operands with at least 2 dims")
    if ad.shape[-1] != bd.shape[-2]:
        raise ValueError(f"matmul dimension mismatch: {ad.shape} @ {bd.shape}")

    def bw(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return _record(ad @ bd, (a, b), bw, "matmul")
