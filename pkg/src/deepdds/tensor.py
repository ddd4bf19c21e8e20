"""Reverse-mode automatic differentiation over dense float64 numpy arrays.

Every op that touches a tensor with ``requires_grad`` records its parents
and a backward rule.  Creation order is a valid topological order, so
:func:`backward` simply replays recorded nodes newest-first.

Broadcasting is limited to python scalars and ``(n,)`` row vectors added to
``(m, n)`` matrices.
"""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Tensor",
    "ShapeMismatch",
    "NotScalar",
    "EmptyInput",
    "no_grad",
    "grad_enabled",
    "backward",
    "matmul",
    "add",
    "sub",
    "mul",
    "relu",
    "elu",
    "exp",
    "log",
    "sigmoid",
    "softmax_rows",
    "reduce_sum",
    "reduce_mean",
    "max_over_rows",
    "concat",
    "scale_rows",
    "pick",
    "spmm",
    "segment_softmax",
    "segment_max",
]


class ShapeMismatch(ValueError):
    pass


class NotScalar(ValueError):
    pass


class EmptyInput(ValueError):
    pass


_ids = itertools.count()
_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable recording on the current thread."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_id", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self._id = next(_ids)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

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

    def __getitem__(self, index):
        return _getitem(self, index)

    def sum(self):
        return reduce_sum(self)

    def mean(self):
        return reduce_mean(self)

    def backward(self):
        backward(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(data: np.ndarray, parents: tuple[Tensor, ...], rule) -> Tensor:
    """Wrap ``data``; attach ``rule(g) -> grads per parent`` when needed."""
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = rule
    return out


def backward(loss: Tensor):
    """Populate ``.grad`` on every leaf reachable from the scalar ``loss``."""
    if loss.data.size != 1 or loss.data.ndim > 1:
        raise NotScalar(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    nodes: dict[int, Tensor] = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        if t._id in nodes or not t.requires_grad:
            continue
        nodes[t._id] = t
        stack.extend(t._parents)

    grads = {loss._id: np.ones_like(loss.data)}
    for tid in sorted(nodes, reverse=True):
        t = nodes[tid]
        g = grads.pop(tid, None)
        if g is None:
            continue
        if t._backward is None:
            t.grad = g.copy() if t.grad is None else t.grad + g
            continue
        for parent, pg in zip(t._parents, t._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent._id in grads:
                grads[parent._id] = grads[parent._id] + pg
            else:
                grads[parent._id] = pg


# -- binary elementwise ------------------------------------------------------

def _broadcast_kind(a: np.ndarray, b: np.ndarray) -> str:
    if a.shape == b.shape:
        return "same"
    if b.ndim == 0:
        return "b_scalar"
    if a.ndim == 0:
        return "a_scalar"
    if a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]:
        return "b_row"
    if b.ndim == 2 and a.ndim == 1 and b.shape[1] == a.shape[0]:
        return "a_row"
    raise ShapeMismatch(f"cannot broadcast {a.shape} with {b.shape}")


def _unbroadcast(g: np.ndarray, kind: str, side: str) -> np.ndarray:
    if kind == "same":
        return g
    if kind == f"{side}_scalar":
        return np.asarray(g.sum())
    if kind == f"{side}_row":
        return g.sum(axis=0)
    return g


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    kind = _broadcast_kind(a.data, b.data)
    return _record(
        a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, kind, "a"), _unbroadcast(g, kind, "b")),
    )


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    kind = _broadcast_kind(a.data, b.data)
    return _record(
        a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, kind, "a"), -_unbroadcast(g, kind, "b")),
    )


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    kind = _broadcast_kind(a.data, b.data)
    return _record(
        a.data * b.data, (a, b),
        lambda g: (
            _unbroadcast(g * b.data, kind, "a") if a.requires_grad else None,
            _unbroadcast(g * a.data, kind, "b") if b.requires_grad else None,
        ),
    )


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul of {a.shape} and {b.shape}")

    def rule(g):
        if b.ndim == 1:
            ga = np.outer(g, b.data) if a.requires_grad else None
            gb = a.data.T @ g if b.requires_grad else None
        else:
            ga = g @ b.data.T if a.requires_grad else None
            gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _record(a.data @ b.data, (a, b), rule)


# -- unary elementwise -------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _record(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def elu(x: Tensor) -> Tensor:
    pos = x.data > 0
    neg_exp = np.exp(np.minimum(x.data, 0.0))
    out = np.where(pos, x.data, neg_exp - 1.0)
    return _record(out, (x,), lambda g: (g * np.where(pos, 1.0, neg_exp),))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _record(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    return _record(np.log(x.data), (x,), lambda g: (g / x.data,))


def sigmoid(x: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _record(out, (x,), lambda g: (g * out * (1.0 - out),))


def softmax_rows(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise ShapeMismatch(f"softmax_rows expects a matrix, got {x.shape}")
    z = np.exp(x.data - x.data.max(axis=1, keepdims=True))
    out = z / z.sum(axis=1, keepdims=True)

    def rule(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return _record(out, (x,), rule)


# -- reductions --------------------------------------------------------------

def reduce_sum(x: Tensor) -> Tensor:
    if x.data.size == 0:
        raise EmptyInput("sum over an empty tensor")
    return _record(np.asarray(x.data.sum()), (x,), lambda g: (np.full(x.shape, float(g)),))


def reduce_mean(x: Tensor) -> Tensor:
    n = x.data.size
    if n == 0:
        raise EmptyInput("mean over an empty tensor")
    return _record(np.asarray(x.data.mean()), (x,), lambda g: (np.full(x.shape, float(g) / n),))


def max_over_rows(x: Tensor) -> Tensor:
    """Column-wise max over rows; gradient goes to the first maximal row."""
    if x.ndim != 2 or x.shape[0] == 0:
        raise EmptyInput("max_over_rows needs at least one row")
    arg = x.data.argmax(axis=0)
    cols = np.arange(x.shape[1])

    def rule(g):
        gx = np.zeros_like(x.data)
        gx[arg, cols] = g
        return (gx,)

    return _record(x.data[arg, cols], (x,), rule)


def segment_max(x: Tensor, offsets) -> Tensor:
    """Per-segment column max over contiguous row ranges ``(start, length)``."""
    rows = []
    for start, length in offsets:
        if length <= 0:
            raise EmptyInput("segment with no rows")
        rows.append(start + x.data[start:start + length].argmax(axis=0))
    arg = np.array(rows, dtype=np.int64).reshape(len(rows), x.shape[1])
    cols = np.broadcast_to(np.arange(x.shape[1]), arg.shape)

    def rule(g):
        gx = np.zeros_like(x.data)
        # argmax rows are distinct within a segment column, and segments are disjoint
        gx[arg, cols] = g
        return (gx,)

    return _record(x.data[arg, cols], (x,), rule)


# -- structural --------------------------------------------------------------

def _getitem(x: Tensor, index) -> Tensor:
    def rule(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, index, g)
        return (gx,)

    return _record(x.data[index], (x,), rule)


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from None
    return _record(out, tuple(tensors), lambda g: tuple(np.split(g, bounds, axis=axis)))


def scale_rows(x: Tensor, s: Tensor) -> Tensor:
    """``x[i, :] * s[i]`` for a matrix ``x`` and a vector ``s``."""
    if x.ndim != 2 or s.shape != (x.shape[0],):
        raise ShapeMismatch(f"scale_rows of {x.shape} by {s.shape}")
    return _record(
        x.data * s.data[:, None], (x, s),
        lambda g: (
            g * s.data[:, None] if x.requires_grad else None,
            (g * x.data).sum(axis=1) if s.requires_grad else None,
        ),
    )


def pick(x: Tensor, index) -> Tensor:
    """``x[i, index[i]]`` for each row ``i``."""
    index = np.asarray(index, dtype=np.int64)
    if x.ndim != 2 or index.shape != (x.shape[0],):
        raise ShapeMismatch(f"pick of {index.shape} from {x.shape}")
    rows = np.arange(x.shape[0])

    def rule(g):
        gx = np.zeros_like(x.data)
        gx[rows, index] = g
        return (gx,)

    return _record(x.data[rows, index], (x,), rule)


def spmm(a, x: Tensor) -> Tensor:
    """Product of a constant (sparse or dense) matrix with a tensor."""
    if a.shape[1] != x.shape[0]:
        raise ShapeMismatch(f"spmm of {a.shape} and {x.shape}")
    at = a.T.tocsr() if sp.issparse(a) else a.T
    out = a @ x.data
    return _record(np.asarray(out), (x,), lambda g: (np.asarray(at @ g),))


def segment_softmax(x: Tensor, segments, n_segments: int) -> Tensor:
    """Softmax of a vector within groups given by integer ``segments``."""
    segments = np.asarray(segments, dtype=np.int64)
    if x.ndim != 1 or segments.shape != x.shape:
        raise ShapeMismatch(f"segment_softmax of {x.shape} with segments {segments.shape}")
    seg_max = np.full(n_segments, -np.inf)
    np.maximum.at(seg_max, segments, x.data)
    z = np.exp(x.data - seg_max[segments])
    denom = np.bincount(segments, weights=z, minlength=n_segments)
    out = z / denom[segments]

    def rule(g):
        dot = np.bincount(segments, weights=g * out, minlength=n_segments)
        return (out * (g - dot[segments]),)

    return _record(out, (x,), rule)
