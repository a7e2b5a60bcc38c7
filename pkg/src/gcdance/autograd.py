"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Every operation returns a :class:`Tensor` that remembers its parents and a
closure mapping the output cotangent to parent cotangents.  Gradients are
never accumulated on the tensors themselves: :func:`grad` walks the graph
from a scalar root and returns fresh arrays, so the same forward graph can be
differentiated from several roots (one per task loss) without any bleed.
"""

from __future__ import annotations

import contextlib
import itertools
import math
from collections import OrderedDict
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64

_GRAD_ENABLED = True
_ids = itertools.count()


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an op."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = shapes
        super().__init__(f"{op}: incompatible shapes {', '.join(str(s) for s in shapes)}")


class GradientError(FloatingPointError):
    """Raised when a backward pass produces a non-finite gradient."""

    def __init__(self, node: "Tensor", message: str):
        self.node = node
        super().__init__(f"{message} (node {node.name or node.op}#{node.uid})")


@contextlib.contextmanager
def no_grad():
    """Build values only; no parents or closures are recorded."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("value", "parents", "backward_fn", "op", "requires_grad", "name", "uid")

    __array_priority__ = 100.0

    def __init__(self, value, requires_grad: bool = False, name: str | None = None,
                 parents: tuple = (), backward_fn: Callable | None = None, op: str = "leaf"):
        self.value = np.asarray(value, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.name = name
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op
        self.uid = next(_ids)

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def numpy(self) -> np.ndarray:
        return self.value

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.shape}, name={self.name})"

    # operator sugar
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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(value, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        return Tensor(value, requires_grad=True, parents=tuple(parents), backward_fn=backward_fn, op=op)
    return Tensor(value, op=op)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_check(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("add", a, b)
    return _make(a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("sub", a, b)
    return _make(a.value - b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("mul", a, b)
    av, bv = a.value, b.value
    return _make(av * bv, (a, b),
                 lambda g: (_unbroadcast(g * bv, a.shape) if a.requires_grad else None,
                            _unbroadcast(g * av, b.shape) if b.requires_grad else None), "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("div", a, b)
    av, bv = a.value, b.value
    out = av / bv
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / bv, a.shape) if a.requires_grad else None,
                            _unbroadcast(-g * out / bv, b.shape) if b.requires_grad else None), "div")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.value)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    av = a.value
    return _make(np.log(av), (a,), lambda g: (g / av,), "log")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.value)
    return _make(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def square(a) -> Tensor:
    a = as_tensor(a)
    av = a.value
    return _make(av * av, (a,), lambda g: (2.0 * g * av,), "square")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.value)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def clip(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    av = a.value
    inside = (av >= lo) & (av <= hi)
    return _make(np.clip(av, lo, hi), (a,), lambda g: (g * inside,), "clip")


# tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
GELU_C = math.sqrt(2.0 / math.pi)
GELU_A = 0.044715


def gelu(a) -> Tensor:
    a = as_tensor(a)
    x = a.value
    x2 = x * x
    th = np.tanh(GELU_C * x * (1.0 + GELU_A * x2))
    half_1p = 0.5 * (1.0 + th)
    out = x * half_1p

    def back(g):
        dinner = GELU_C * (1.0 + 3.0 * GELU_A * x2)
        return (g * (half_1p + 0.5 * x * (1.0 - th * th) * dinner),)

    return _make(out, (a,), back, "gelu")


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim < 1:
        raise ShapeError("matmul", a.shape, b.shape)
    ka = a.shape[-1]
    kb = b.shape[-2] if b.ndim >= 2 else b.shape[0]
    if ka != kb:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        out = np.matmul(a.value, b.value)
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape) from None
    av, bv = a.value, b.value

    def back(g):
        ga = gb = None
        if b.ndim == 1:
            if a.requires_grad:
                ga = g[..., None] * bv
            if b.requires_grad:
                gb = (av * g[..., None]).reshape(-1, bv.shape[0]).sum(axis=0)
            return ga, gb
        if a.ndim == 1:
            if a.requires_grad:
                ga = _unbroadcast(np.matmul(g[..., None, :], np.swapaxes(bv, -1, -2))[..., 0, :], a.shape)
            if b.requires_grad:
                gb = _unbroadcast(av[:, None] * g[..., None, :], b.shape)
            return ga, gb
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(bv, -1, -2)), a.shape)
        if b.requires_grad:
            if b.ndim == 2:
                gb = av.reshape(-1, ka).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.matmul(np.swapaxes(av, -1, -2), g), b.shape)
        return ga, gb

    return _make(out, (a, b), back, "matmul")


def cross(a, b) -> Tensor:
    """Cross product along the last axis (length 3)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != 3 or b.shape[-1] != 3:
        raise ShapeError("cross", a.shape, b.shape)
    _broadcast_check("cross", a, b)
    av, bv = a.value, b.value
    return _make(np.cross(av, bv), (a, b),
                 lambda g: (_unbroadcast(np.cross(bv, g), a.shape) if a.requires_grad else None,
                            _unbroadcast(np.cross(g, av), b.shape) if b.requires_grad else None), "cross")


# ---------------------------------------------------------------- reductions

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def reduce_sum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    shape = a.shape

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape),)

    return _make(a.value.sum(axis=axes, keepdims=keepdims), (a,), back, "sum")


def reduce_mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    n = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    shape = a.shape

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / n, shape),)

    return _make(a.value.mean(axis=axes, keepdims=keepdims), (a,), back, "mean")


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    x = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(x)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (a,), back, "softmax")


def layer_norm(a, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean, unit variance (no affine)."""
    a = as_tensor(a)
    x = a.value
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def back(g):
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * xhat).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - xhat * gx),)

    return _make(xhat, (a,), back, "layer_norm")


# ---------------------------------------------------------------- shape ops

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = a.value.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", old, tuple(shape)) from None
    return _make(out, (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    if sorted(ax % a.ndim for ax in axes) != list(range(a.ndim)):
        raise ShapeError("transpose", a.shape, tuple(axes))
    inv = np.argsort([ax % a.ndim for ax in axes])
    return _make(np.transpose(a.value, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def swapaxes(a, i: int, j: int) -> Tensor:
    a = as_tensor(a)
    axes = list(range(a.ndim))
    axes[i], axes[j] = axes[j], axes[i]
    return transpose(a, tuple(axes))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    ref = ts[0].shape
    ax = axis % len(ref)
    for t in ts[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeError("concat", *(t.shape for t in ts))
    sizes = [t.shape[ax] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=ax))

    return _make(np.concatenate([t.value for t in ts], axis=ax), ts, back, "concat")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if any(t.shape != ts[0].shape for t in ts):
        raise ShapeError("stack", *(t.shape for t in ts))
    ax = axis % (ts[0].ndim + 1)

    def back(g):
        return tuple(np.take(g, i, axis=ax) for i in range(len(ts)))

    return _make(np.stack([t.value for t in ts], axis=ax), ts, back, "stack")


def getitem(a, index) -> Tensor:
    """Basic slicing and integer-array indexing."""
    a = as_tensor(a)
    try:
        out = a.value[index]
    except IndexError:
        raise ShapeError("slice", a.shape, index) from None
    shape = a.shape
    basic = not isinstance(index, (list, np.ndarray)) and not (
        isinstance(index, tuple) and any(isinstance(i, (list, np.ndarray)) for i in index))

    def back(g):
        full = np.zeros(shape, dtype=DTYPE)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _make(out, (a,), back, "slice")


def embedding(table, ids) -> Tensor:
    """Row lookup: table (N, D), integer ids of any shape -> ids.shape + (D,)."""
    table = as_tensor(table)
    ids = np.asarray(ids)
    if ids.dtype.kind not in "iu":
        raise TypeError("embedding ids must be integers")
    if table.ndim != 2 or (ids.size and (ids.min() < 0 or ids.max() >= table.shape[0])):
        raise ShapeError("embedding", table.shape, ids.shape)
    shape = table.shape

    def back(g):
        full = np.zeros(shape, dtype=DTYPE)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, shape[1]))
        return (full,)

    return _make(table.value[ids], (table,), back, "embedding")


def attention(q, k, v, scale: float | None = None) -> Tensor:
    """Scaled dot-product attention composed from primitives.

    q: (..., Lq, d), k: (..., Lk, d), v: (..., Lk, dv).
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeError("attention", q.shape, k.shape, v.shape)
    if scale is None:
        scale = 1.0 / math.sqrt(q.shape[-1])
    scores = matmul(q, swapaxes(k, -1, -2)) * scale
    return matmul(softmax(scores, axis=-1), v)


# ---------------------------------------------------------------- backward

def _topo(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack_ = [(root, False)]
    while stack_:
        node, done = stack_.pop()
        if done:
            order.append(node)
            continue
        if node.uid in seen:
            continue
        seen.add(node.uid)
        stack_.append((node, True))
        for p in node.parents:
            if p.requires_grad and p.uid not in seen:
                stack_.append((p, False))
    return order


def backward(root: Tensor) -> dict[int, np.ndarray]:
    """Gradients of a scalar ``root`` for every leaf that requires grad.

    Returns a map ``leaf.uid -> gradient``.  The graph is left intact so the
    call can be repeated for other roots sharing the same forward pass.
    """
    if root.value.size != 1:
        raise ShapeError("backward (root must be scalar)", root.shape)
    if not root.requires_grad:
        return {}
    order = _topo(root)
    grads: dict[int, np.ndarray] = {root.uid: np.ones(root.shape, dtype=DTYPE)}
    leaves: dict[int, np.ndarray] = {}
    for node in reversed(order):
        g = grads.pop(node.uid, None)
        if g is None:
            continue
        if node.backward_fn is None:
            if not np.all(np.isfinite(g)):
                raise GradientError(node, "non-finite gradient")
            leaves[node.uid] = g
            continue
        pgrads = node.backward_fn(g)
        for p, pg in zip(node.parents, pgrads):
            if pg is None or not p.requires_grad:
                continue
            if p.uid in grads:
                grads[p.uid] = grads[p.uid] + pg
            else:
                grads[p.uid] = pg
    return leaves


def grad(root: Tensor, wrt: Iterable[Tensor]) -> list[np.ndarray]:
    """Gradient of ``root`` with respect to each tensor in ``wrt`` (zeros if unreachable)."""
    leaves = backward(root)
    return [np.array(leaves[t.uid], dtype=DTYPE) if t.uid in leaves else np.zeros(t.shape, dtype=DTYPE)
            for t in wrt]


# ---------------------------------------------------------------- parameters

class ParameterStore:
    """Named trainable arrays with a deterministic flattened ordering."""

    def __init__(self):
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(value, dtype=DTYPE), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self):
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    @property
    def size(self) -> int:
        return int(sum(t.value.size for t in self._params.values()))

    def flatten(self) -> np.ndarray:
        if not self._params:
            return np.zeros(0, dtype=DTYPE)
        return np.concatenate([t.value.ravel() for t in self._params.values()])

    def unflatten(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=DTYPE)
        if vec.shape != (self.size,):
            raise ShapeError("unflatten", vec.shape, (self.size,))
        off = 0
        for t in self._params.values():
            n = t.value.size
            t.value = vec[off:off + n].reshape(t.value.shape).copy()
            off += n

    def flat_grad(self, root: Tensor) -> np.ndarray:
        """Flattened gradient of ``root`` in parameter order."""
        leaves = backward(root)
        parts = []
        for t in self._params.values():
            g = leaves.get(t.uid)
            parts.append(np.zeros(t.value.size, dtype=DTYPE) if g is None else np.asarray(g).ravel())
        return np.concatenate(parts) if parts else np.zeros(0, dtype=DTYPE)

    def slices(self) -> dict[str, slice]:
        out, off = {}, 0
        for name, t in self._params.items():
            out[name] = slice(off, off + t.value.size)
            off += t.value.size
        return out

    def state(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, t.value.copy()) for k, t in self._params.items())

    def load_state(self, state) -> None:
        for k, v in state.items():
            if k not in self._params:
                raise KeyError(f"unknown parameter {k!r}")
            v = np.asarray(v, dtype=DTYPE)
            if v.shape != self._params[k].shape:
                raise ShapeError(f"load {k}", v.shape, self._params[k].shape)
            self._params[k].value = v.copy()
