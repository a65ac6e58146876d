"""Reverse-mode differentiable tensors over numpy arrays.

Every op records its parents and a backward closure. Nodes receive a
monotonically increasing id at creation, so sorting by id is a valid
topological order; backward walks it in reverse.
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

_ids = itertools.count()
_state = {"dtype": np.float32, "grad_enabled": True}


class NumericError(FloatingPointError):
    """Non-finite values reached a graph boundary."""

    def __init__(self, message: str, node_id: int | None = None):
        super().__init__(message)
        self.node_id = node_id


def default_dtype():
    return _state["dtype"]


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype used for new tensors (e.g. float64 for checks)."""
    prev = _state["dtype"]
    _state["dtype"] = np.dtype(dtype).type
    try:
        yield
    finally:
        _state["dtype"] = prev


@contextlib.contextmanager
def no_grad():
    prev = _state["grad_enabled"]
    _state["grad_enabled"] = False
    try:
        yield
    finally:
        _state["grad_enabled"] = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "parents", "backward_fn", "id", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype or _state["dtype"])
        self.data = arr
        self.requires_grad = requires_grad
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn: Callable | None = None
        self.id = next(_ids)
        self.op = "leaf"

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def T(self) -> Tensor:
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data, dtype=self.data.dtype)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, id={self.id})"

    # -- operators --------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, neg(other))

    def __rsub__(self, other):
        return add(other, neg(self))

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

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


class Parameter(Tensor):
    """A trainable leaf; modules discover these by type."""

    __slots__ = ()

    def __init__(self, data, requires_grad: bool = True, dtype=None):
        super().__init__(data, requires_grad=requires_grad, dtype=dtype)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if dtype is None and isinstance(x, np.ndarray) and x.dtype.kind == "f":
        dtype = x.dtype
    return Tensor(x, dtype=dtype)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.id = next(_ids)
    out.op = op
    needs = _state["grad_enabled"] and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs:
        out.parents = tuple(parents)
        out.backward_fn = backward_fn
    else:
        out.parents = ()
        out.backward_fn = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _pair(a, b):
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(b, dtype=a.dtype)
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(a, dtype=b.dtype)
    elif not isinstance(a, Tensor):
        a, b = Tensor(a), Tensor(b)
    return a, b


# -- elementwise ---------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), backward, "add")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data / b.data

    def backward(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return _make(out, (a, b), backward, "div")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a) -> Tensor:
    """Tanh approximation of GELU."""
    a = as_tensor(a)
    x = a.data
    c = x.dtype.type(_GELU_C)
    k = x.dtype.type(0.044715)
    x2 = x * x
    th = np.tanh(c * x * (1 + k * x2))
    out = 0.5 * x * (1 + th)

    def backward(g):
        dinner = c * (1 + 3 * k * x2)
        return (g * (0.5 * (1 + th) + 0.5 * x * (1 - th * th) * dinner),)

    return _make(out, (a,), backward, "gelu")


def sin(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),), "sin")


def cos(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),), "cos")


def clip(a, lo, hi) -> Tensor:
    a = as_tensor(a)
    out = np.clip(a.data, lo, hi)
    mask = (a.data >= lo) & (a.data <= hi)
    return _make(out, (a,), lambda g: (g * mask,), "clip")


def minimum(a, b) -> Tensor:
    """Elementwise min; ties send the gradient to ``a``."""
    a, b = _pair(a, b)
    pick_a = a.data <= b.data
    out = np.where(pick_a, a.data, b.data)

    def backward(g):
        return _unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)

    return _make(out, (a, b), backward, "minimum")


def square(a) -> Tensor:
    return mul(a, a)


# -- linear algebra and shape --------------------------------------------
def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)
    A, B = a.data, b.data

    def backward(g):
        if B.ndim == 2 and A.ndim > 2:
            k = A.shape[-1]
            gA = g @ B.T
            gB = A.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
            return gA, gB
        gA = g @ np.swapaxes(B, -1, -2)
        gB = np.swapaxes(A, -1, -2) @ g
        return _unbroadcast(gA, A.shape), _unbroadcast(gB, B.shape)

    return _make(A @ B, (a, b), backward, "matmul")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(range(a.ndim))[:-2] + (a.ndim - 1, a.ndim - 2)
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    orig = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(orig),), "reshape")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, "concat")


def split(a, sizes: Sequence[int], axis: int = 0) -> list[Tensor]:
    """Split along ``axis`` into pieces of the given sizes (exact adjoint of concat)."""
    a = as_tensor(a)
    if int(np.sum(sizes)) != a.shape[axis]:
        raise ValueError(f"split sizes {list(sizes)} do not cover axis of length {a.shape[axis]}")
    out = []
    start = 0
    for n in sizes:
        idx = [slice(None)] * a.ndim
        idx[axis] = slice(start, start + n)
        out.append(getitem(a, tuple(idx)))
        start += n
    return out


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    if isinstance(idx, Tensor):
        idx = idx.data
    out = a.data[idx]

    basic = _is_basic(idx)

    def backward(g):
        full = np.zeros_like(a.data)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _make(out, (a,), backward, "getitem")


def _is_basic(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (slice, int, np.integer)) or i is None or i is Ellipsis for i in items)


def gather(a, index, axis: int = 0) -> Tensor:
    """Select entries of ``a`` along ``axis`` by integer index (repeats allowed)."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    out = np.take(a.data, index, axis=axis)

    def backward(g):
        full = np.zeros_like(a.data)
        moved = np.moveaxis(full, axis, 0)
        np.add.at(moved, index, np.moveaxis(g, axis, 0))
        return (full,)

    return _make(out, (a,), backward, "gather")


def scatter(a, index, length: int, axis: int = 0) -> Tensor:
    """Adjoint of gather: add slices of ``a`` into a zero tensor at ``index`` positions."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    shape = list(a.shape)
    shape[axis] = length
    out = np.zeros(shape, dtype=a.dtype)
    np.add.at(np.moveaxis(out, axis, 0), index, np.moveaxis(a.data, axis, 0))

    def backward(g):
        return (np.take(g, index, axis=axis),)

    return _make(out, (a,), backward, "scatter")


# -- reductions and normalisation ----------------------------------------
def sum(a, axis=None, keepdims=False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), backward, "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    n = a.size if axis is None else int(np.prod([shape[i] for i in np.atleast_1d(axis)]))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, shape).copy(),)

    return _make(np.mean(a.data, axis=axis, keepdims=keepdims), (a,), backward, "mean")


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _make(s, (a,), backward, "softmax")


def layer_norm(a, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then scale and shift."""
    a, gamma, beta = as_tensor(a), as_tensor(gamma), as_tensor(beta)
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat * gamma.data + beta.data
    n = x.shape[-1]

    def backward(g):
        gx_hat = g * gamma.data
        gx = rstd * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                     - xhat * (gx_hat * xhat).sum(axis=-1, keepdims=True) / n)
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _make(out, (a, gamma, beta), backward, "layer_norm")


# -- differentiation -----------------------------------------------------
def _graph(root: Tensor) -> list[Tensor]:
    seen: dict[int, Tensor] = {}
    stack = [root]
    while stack:
        node = stack.pop()
        if node.id in seen:
            continue
        seen[node.id] = node
        stack.extend(p for p in node.parents if p.id not in seen)
    return [seen[k] for k in sorted(seen)]


def _first_nonfinite(nodes: Iterable[Tensor]) -> int | None:
    for node in nodes:
        if not np.all(np.isfinite(node.data)):
            return node.id
    return None


def grad(loss: Tensor, params: Sequence[Tensor]) -> list[np.ndarray]:
    """Gradients of a scalar ``loss`` with respect to each of ``params``.

    Parameters the loss does not depend on get zero gradients.
    """
    if loss.size != 1:
        raise ValueError(f"grad needs a scalar loss, got shape {loss.shape}")
    nodes = _graph(loss)
    if not np.all(np.isfinite(loss.data)):
        bad = _first_nonfinite(nodes)
        raise NumericError(f"non-finite loss (first bad node id={bad})", node_id=bad)
    grads: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.data)}
    for node in reversed(nodes):
        g = grads.get(node.id)
        if g is None or node.backward_fn is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if not parent.requires_grad or pg is None:
                continue
            if parent.id in grads:
                grads[parent.id] = grads[parent.id] + pg
            else:
                grads[parent.id] = pg
    out = []
    for p in params:
        g = grads.get(p.id)
        out.append(np.zeros_like(p.data) if g is None else np.asarray(g, dtype=p.dtype).reshape(p.shape))
    return out
