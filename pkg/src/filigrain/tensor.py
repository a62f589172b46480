"""Dense float64 tensors with reverse-mode automatic differentiation.

Every public operation returns a new :class:`Tensor`. When any input requires
a gradient, the result remembers its parents and a backward rule; calling
:func:`backward` on a scalar result walks the recorded graph once in reverse
topological order and accumulates gradients additively.

Operations act on the last axis ("rows") and accept leading batch axes, which
is all the encoders and the late-interaction kernel need.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

HALF_MAX = 65504.0

_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording in the current thread."""
    prev = _grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class DimensionError(ValueError):
    pass


class EmptyCandidateError(ValueError):
    pass


class RankError(ValueError):
    pass


class HalfOverflowError(OverflowError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    @classmethod
    def _result(cls, data: np.ndarray, parents: Sequence["Tensor"], backward: Callable) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        if _grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # operator sugar
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
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return swapaxes(self, -1, -2)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return Tensor._result(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return Tensor._result(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.isscalar(b):
        return scale(a, b)
    if not isinstance(a, Tensor) and np.isscalar(a):
        return scale(b, a)
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor._result(a.data * b.data, (a, b), bw)


def div(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.isscalar(b):
        return scale(a, 1.0 / b)
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * out / b.data, b.shape)
        return ga, gb

    return Tensor._result(out, (a, b), bw)


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return Tensor._result(a.data * c, (a,), lambda g: (g * c,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor._result(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return Tensor._result(np.log(a.data), (a,), lambda g: (g / a.data,))


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a: Tensor) -> Tensor:
    """Tanh-approximated GELU."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * (x * x * x))
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def bw(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * (x * x))
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return Tensor._result(out, (a,), bw)


def dropout(a: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    if rate <= 0.0 or rng is None:
        return a
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return Tensor._result(a.data * keep, (a,), lambda g: (g * keep,))


# ---------------------------------------------------------------------------
# reductions and shape plumbing
# ---------------------------------------------------------------------------


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor._result(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), bw)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(tsum(a, axis, keepdims), 1.0 / n)


def masked_mean(a: Tensor, mask: np.ndarray, axis: int = -1) -> Tensor:
    """Mean of ``a`` along ``axis`` restricted to entries where ``mask`` is true."""
    m = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
    count = m.sum(axis=axis, keepdims=True)
    if np.any(count == 0):
        raise EmptyCandidateError("masked_mean over an empty set")
    w = m / count
    out = np.sum(np.where(m, a.data, 0.0) * w, axis=axis)
    ax = axis

    def bw(g):
        return (np.expand_dims(g, ax) * w,)

    return Tensor._result(out, (a,), bw)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return Tensor._result(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return Tensor._result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def swapaxes(a: Tensor, i: int, j: int) -> Tensor:
    return Tensor._result(np.swapaxes(a.data, i, j), (a,), lambda g: (np.swapaxes(g, i, j),))


def getitem(a: Tensor, index) -> Tensor:
    shape = a.shape

    parts = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(p, (int, np.integer, slice)) or p is None or p is Ellipsis for p in parts)

    def bw(g):
        out = np.zeros(shape)
        if basic:  # basic indexing never repeats an element
            out[index] = g
        else:
            np.add.at(out, index, g)
        return (out,)

    return Tensor._result(np.array(a.data[index]), (a,), bw)


def embedding(table: Tensor, ids) -> Tensor:
    """Row lookup ``table[ids]``; gradient rows are scatter-added."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"embedding id out of range [0, {table.shape[0]})")
    shape = table.shape

    def bw(g):
        out = np.zeros(shape)
        np.add.at(out, ids.reshape(-1), g.reshape(-1, shape[-1]))
        return (out,)

    return Tensor._result(table.data[ids], (table,), bw)


def take_rows(a: Tensor, index: np.ndarray) -> Tensor:
    """Gather along the second-to-last axis with per-batch indices.

    ``a`` has shape (..., n, d) and ``index`` shape (..., k); the result is
    (..., k, d).
    """
    index = np.asarray(index, dtype=np.int64)
    idx = index[..., None]
    out = np.take_along_axis(a.data, idx, axis=-2)
    shape = a.shape

    def bw(g):
        full = np.zeros(shape)
        lead = np.indices(index.shape)
        np.add.at(full, (*lead[:-1], index), g)
        return (full,)

    return Tensor._result(out, (a,), bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._result(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw)


def concat_rows(tensors: Sequence[Tensor]) -> Tensor:
    return concat(tensors, axis=-2)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul needs operands of rank >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")

    if b.ndim == 2 and a.ndim > 2:
        # activations times a weight matrix: fold the batch axes into one GEMM
        flat = a.data.reshape(-1, a.shape[-1])

        def bw_flat(g):
            g2 = g.reshape(-1, g.shape[-1])
            return (g2 @ b.data.T).reshape(a.shape), flat.T @ g2

        out = (flat @ b.data).reshape(*a.shape[:-1], b.shape[-1])
        return Tensor._result(out, (a, b), bw_flat)

    def bw(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return Tensor._result(a.data @ b.data, (a, b), bw)


def transpose2d(a: Tensor) -> Tensor:
    return swapaxes(a, -1, -2)


# ---------------------------------------------------------------------------
# row-wise operators
# ---------------------------------------------------------------------------


def softmax_rows(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax along the last axis, with optional boolean mask of allowed entries.

    Masked-out entries get probability zero. Every row must keep at least one
    allowed entry.
    """
    z = x.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), z.shape)
        if not mask.any(axis=-1).all():
            raise EmptyCandidateError("softmax row with no allowed entries")
        z = np.where(mask, z, -np.inf)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    y = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return Tensor._result(y, (x,), bw)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def bw(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return Tensor._result(out, (x,), bw)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data
    n = x.shape[-1]

    def bw(g):
        gx_hat = g * gain.data
        gx = inv / n * (
            n * gx_hat - gx_hat.sum(axis=-1, keepdims=True) - xhat * (gx_hat * xhat).sum(axis=-1, keepdims=True)
        )
        ggain = _unbroadcast(g * xhat, gain.shape)
        gbias = _unbroadcast(g, bias.shape)
        return gx, ggain, gbias

    return Tensor._result(out, (x, gain, bias), bw)


def l2_normalize_rows(x: Tensor, eps: float = 1e-8) -> Tensor:
    """Divide each row by ``max(norm, eps)``."""
    norm = np.sqrt((x.data * x.data).sum(axis=-1, keepdims=True))
    denom = np.maximum(norm, eps)
    y = x.data / denom
    live = norm > eps

    def bw(g):
        proj = np.where(live, (g * y).sum(axis=-1, keepdims=True), 0.0)
        return ((g - y * proj) / denom,)

    return Tensor._result(y, (x,), bw)


def masked_max_rows(x: Tensor, mask) -> tuple[Tensor, np.ndarray]:
    """Maximum along the last axis over entries where ``mask`` is true.

    Returns the values and the winning column index; ties go to the lowest
    index and the backward pass routes the whole gradient to that entry.
    """
    m = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    if not m.any(axis=-1).all():
        raise EmptyCandidateError("masked_max_rows: a row has no candidate column")
    z = np.where(m, x.data, -np.inf)
    arg = z.argmax(axis=-1)
    vals = np.take_along_axis(x.data, arg[..., None], axis=-1)[..., 0]
    shape = x.shape

    def bw(g):
        out = np.zeros(shape)
        np.put_along_axis(out, arg[..., None], g[..., None], axis=-1)
        return (out,)

    return Tensor._result(vals, (x,), bw), arg


def half_round(x: Tensor) -> Tensor:
    """Round every value to the nearest binary16 number, kept at float64.

    Gradients pass straight through.
    """
    if np.any(np.abs(x.data) > HALF_MAX):
        raise HalfOverflowError("value exceeds binary16 range (65504)")
    out = x.data.astype(np.float16).astype(np.float64)
    return Tensor._result(out, (x,), lambda g: (g,))


# ---------------------------------------------------------------------------
# reverse pass
# ---------------------------------------------------------------------------


class Tape:
    """Recorded nodes reachable from a root, in topological order."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_root(cls, root: Tensor) -> "Tape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)


def backward(loss: Tensor) -> Tape:
    """Populate ``.grad`` on every tensor that requires it and feeds ``loss``."""
    if loss.data.size != 1 or loss.ndim > 1:
        raise RankError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = Tape.from_root(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        node.grad = g if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
    return tape


def numerical_grad(f: Callable[[], float], x: Tensor, h: float = 1e-5, index: Iterable | None = None) -> np.ndarray:
    """Central finite differences of ``f`` with respect to entries of ``x``.

    ``f`` is re-evaluated after perturbing ``x.data`` in place. With ``index``
    only the listed flat positions are probed; the rest stay NaN.
    """
    flat = x.data.reshape(-1)
    out = np.full(flat.shape, np.nan)
    positions = range(flat.size) if index is None else index
    for i in positions:
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        out[i] = (fp - fm) / (2 * h)
    return out.reshape(x.shape)
