"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every op that touches a tensor flagged ``requires_grad`` while recording is
enabled appends a node to the tape: the output, its parents and a closure
mapping the output gradient to parent gradients.  Nodes carry a monotonically
increasing sequence number, so replaying them in descending order is a valid
reverse topological order.
"""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError

_SEQ = itertools.count()
_state = threading.local()

SOFTPLUS_LINEAR_CUTOFF = 30.0


def is_recording() -> bool:
    return getattr(_state, "recording", True)


@contextmanager
def no_grad():
    """Disable tape recording for the enclosed block (per thread)."""
    prev = is_recording()
    _state.recording = False
    try:
        yield
    finally:
        _state.recording = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_seq", "_consumed")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64, copy=True)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._seq = next(_SEQ)
        self._consumed = False

    # -- construction helpers -------------------------------------------------

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = np.asarray(arr, dtype=np.float64)
        t.requires_grad = False
        t.grad = None
        t._parents = ()
        t._backward = None
        t._seq = next(_SEQ)
        t._consumed = False
        return t

    @classmethod
    def from_op(cls, out: np.ndarray, parents: Sequence["Tensor"], backward) -> "Tensor":
        """Build the result of a primitive op and record it if any parent is tracked.

        ``backward`` receives the output gradient and returns one gradient (or
        None) per parent, each with the parent's shape.
        """
        t = cls._wrap(out)
        if is_recording() and any(p.requires_grad for p in parents):
            t.requires_grad = True
            t._parents = tuple(parents)
            t._backward = backward
        return t

    # -- basic properties -----------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- reverse pass ---------------------------------------------------------

    def backward(self) -> None:
        backward(self)

    # -- operator sugar -------------------------------------------------------

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor._wrap(np.asarray(x, dtype=np.float64))


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def backward(loss: Tensor) -> None:
    """Replay the tape behind ``loss`` in reverse, filling ``.grad`` on leaves and nodes.

    The graph is released afterwards; a second call on the same loss raises.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise ContractError("backward() already ran on this loss; rebuild the graph first")
    if not loss.requires_grad:
        raise ContractError("loss is not connected to any tensor that requires grad")

    nodes: dict[int, Tensor] = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in nodes:
            continue
        nodes[id(t)] = t
        stack.extend(p for p in t._parents if p.requires_grad)

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for t in sorted(nodes.values(), key=lambda n: n._seq, reverse=True):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        t.grad = g if t.grad is None else t.grad + g
        if t._backward is None:
            continue
        parent_grads = t._backward(g)
        for p, pg in zip(t._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            if pg.shape != p.shape:
                raise DimensionError(f"gradient shape {pg.shape} does not match tensor {p.shape}")
            prev = grads.get(id(p))
            grads[id(p)] = pg if prev is None else prev + pg
        t._backward = None
        t._parents = ()
    loss._consumed = True


# -- broadcasting ---------------------------------------------------------------


def _broadcast_shape(a: tuple[int, ...], b: tuple[int, ...]) -> tuple[int, ...]:
    out = []
    for i in range(1, max(len(a), len(b)) + 1):
        da = a[-i] if i <= len(a) else 1
        db = b[-i] if i <= len(b) else 1
        if da != db and da != 1 and db != 1:
            raise DimensionError(f"shapes {a} and {b} are not broadcastable")
        out.append(max(da, db))
    return tuple(reversed(out))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, d in enumerate(shape):
        if d == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# -- elementwise binary -----------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    return Tensor.from_op(
        a.data + b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    return Tensor.from_op(
        a.data - b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    return Tensor.from_op(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    out = a.data / b.data
    return Tensor.from_op(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)),
    )


# -- elementwise unary ------------------------------------------------------------


def neg(a) -> Tensor:
    a = as_tensor(a)
    return Tensor.from_op(-a.data, (a,), lambda g: (-g,))


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    out = a.data**exponent
    return Tensor.from_op(out, (a,), lambda g: (g * exponent * a.data ** (exponent - 1),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return Tensor.from_op(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return Tensor.from_op(np.log(a.data), (a,), lambda g: (g / a.data,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # branch-free stable form: never exponentiates a positive number
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def softplus_np(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    safe = np.minimum(x, SOFTPLUS_LINEAR_CUTOFF)
    return np.where(x > SOFTPLUS_LINEAR_CUTOFF, x, np.log1p(np.exp(safe)))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = _sigmoid(a.data)
    return Tensor.from_op(s, (a,), lambda g: (g * s * (1.0 - s),))


def softplus(a) -> Tensor:
    """ln(1 + e^x); returns x itself above the linear cutoff."""
    a = as_tensor(a)
    return Tensor.from_op(softplus_np(a.data), (a,), lambda g: (g * _sigmoid(a.data),))


def silu(a) -> Tensor:
    a = as_tensor(a)
    s = _sigmoid(a.data)
    return Tensor.from_op(a.data * s, (a,), lambda g: (g * s * (1.0 + a.data * (1.0 - s)),))


def elementwise(op: str, a, b=None) -> Tensor:
    binary = {"add": add, "mul": mul, "sub": sub, "div": div}
    unary = {"exp": exp, "softplus": softplus, "silu": silu, "neg": neg, "sigmoid": sigmoid, "log": log}
    if op in binary:
        if b is None:
            raise ContractError(f"{op} needs two operands")
        return binary[op](a, b)
    if op in unary:
        return unary[op](a)
    raise ContractError(f"unknown elementwise op {op!r}")


# -- linear algebra -----------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast like numpy."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor.from_op(out, (a, b), bw)


# -- reductions and shape ops -------------------------------------------------------


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor.from_op(out, (a,), bw)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return sum_(a, axis, keepdims) * (1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return Tensor.from_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return Tensor.from_op(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def take(a, index) -> Tensor:
    """Numpy-style indexing (basic or integer-array); repeated indices accumulate."""
    a = as_tensor(a)
    if isinstance(index, Tensor):
        index = index.data.astype(np.int64)

    basic = all(isinstance(i, (slice, int, type(Ellipsis))) for i in (index if isinstance(index, tuple) else (index,)))

    def bw(g):
        full = np.zeros_like(a.data)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return Tensor.from_op(a.data[index], (a,), bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return Tensor.from_op(
        np.concatenate([t.data for t in tensors], axis=axis),
        tensors,
        lambda g: tuple(np.split(g, splits, axis=axis)),
    )


# -- softmax family ------------------------------------------------------------------


def softmax_lastdim(a, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis with max subtraction.

    ``mask`` (boolean, broadcastable) marks allowed entries; masked entries get
    probability exactly 0.  Every row needs at least one allowed entry.
    """
    a = as_tensor(a)
    if a.ndim == 0 or a.shape[-1] < 1:
        raise DimensionError(f"softmax needs a non-empty last axis, got {a.shape}")
    x = a.data if mask is None else np.where(mask, a.data, -np.inf)
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    p = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return Tensor.from_op(p, (a,), bw)


def logsumexp(a, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """log(sum(exp(x))) along ``axis`` (dropped), skipping entries where ``mask`` is False."""
    a = as_tensor(a)
    x = a.data if mask is None else np.where(mask, a.data, -np.inf)
    m = x.max(axis=axis, keepdims=True)
    e = np.exp(x - m)
    s = e.sum(axis=axis, keepdims=True)
    out = (np.log(s) + m).squeeze(axis)
    w = e / s

    def bw(g):
        return (np.expand_dims(g, axis) * w,)

    return Tensor.from_op(out, (a,), bw)


def l2_normalize(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    norm = np.sqrt((a.data**2).sum(axis=axis, keepdims=True))
    if np.any(norm == 0):
        raise ContractError("cannot normalize a zero vector")
    u = a.data / norm

    def bw(g):
        return ((g - u * (g * u).sum(axis=axis, keepdims=True)) / norm,)

    return Tensor.from_op(u, (a,), bw)


# -- finite-difference check ----------------------------------------------------------


def numerical_grad(fn: Callable[[], Tensor], param: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``fn()`` with respect to every entry of ``param``."""
    out = np.zeros_like(param.data)
    param.data = np.ascontiguousarray(param.data)
    flat = param.data.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = fn().item()
            flat[i] = orig - h
            fm = fn().item()
            flat[i] = orig
            out.reshape(-1)[i] = (fp - fm) / (2 * h)
    return out


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def gradcheck(fn: Callable[[], Tensor], params: Iterable[Tensor], h: float = 1e-5) -> float:
    """Worst relative error between tape gradients and central differences."""
    params = list(params)
    for p in params:
        p.grad = None
    loss = fn()
    backward(loss)
    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        worst = max(worst, max_relative_error(analytic, numerical_grad(fn, p, h)))
    return worst
