"""Dense tensors with define-by-run reverse-mode differentiation.

Every op below wraps a numpy computation and records a closure that maps the
output adjoint to one adjoint per input.  ``backward`` walks the recorded
graph in reverse topological order.  The graph is rebuilt on every forward
pass and released after one backward pass.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

_state = threading.local()
_OPS: dict[str, str] = {}


class ShapeError(ValueError):
    pass


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


def _debug() -> bool:
    return getattr(_state, "debug", False)


@contextmanager
def no_grad():
    """Disable graph recording in the current thread."""
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


@contextmanager
def debug_checks(enabled: bool = True):
    """Raise ``FloatingPointError`` as soon as an op produces a non-finite value."""
    prev = _debug()
    _state.debug = enabled
    try:
        yield
    finally:
        _state.debug = prev


def register(name: str, doc: str = ""):
    def deco(fn):
        _OPS[name] = doc or (fn.__doc__ or "").strip().split("\n")[0]
        return fn

    return deco


def op_set() -> list[str]:
    """Names of every differentiable op, each with a registered adjoint."""
    return sorted(_OPS)


class _SliceGrad:
    """Adjoint that only touches ``index`` of its parent; avoids dense zeros per slice."""

    __slots__ = ("index", "value")

    def __init__(self, index, value):
        self.index = index
        self.value = value


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op", "_consumed", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._op: str | None = None
        self._consumed = False
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
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

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

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
        return mul(self, reciprocal(as_tensor(other, self.dtype)))

    def __rtruediv__(self, other):
        return mul(other, reciprocal(self))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice_(self, index)

    @property
    def T(self):
        return transpose(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def backward(self, leaves: Sequence["Tensor"] | None = None):
        return backward(self, leaves)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else np.float64))


def parameter(data, name: str | None = None, dtype=None) -> Tensor:
    return Tensor(np.array(data, dtype=dtype, copy=True), requires_grad=True, name=name)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    return a, b


def _result(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn, op: str) -> Tensor:
    if _debug() and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite output from op '{op}'")
    out = Tensor(data)
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
        out._op = op
    return out


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` over the axes that broadcasting expanded to reach its shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise


@register("add", "elementwise addition with broadcasting")
def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape
    return _result(a.data + b.data, (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(g, sb)), "add")


@register("sub", "elementwise subtraction with broadcasting")
def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _result(a.data - b.data, (a, b), lambda g: (unbroadcast(g, sa), -unbroadcast(g, sb)), "sub")


@register("mul", "elementwise product with broadcasting")
def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "mul")
    ad, bd = a.data, b.data

    def bw(g):
        return (
            unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        )

    return _result(ad * bd, (a, b), bw, "mul")


@register("broadcast", "explicit broadcast to a target shape")
def broadcast_to(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    try:
        out = np.broadcast_to(x.data, shape)
    except ValueError:
        raise ShapeError(f"broadcast: cannot broadcast {x.shape} to {tuple(shape)}") from None
    src = x.shape
    return _result(out, (x,), lambda g: (unbroadcast(g, src),), "broadcast")


@register("exp")
def exp(x: Tensor) -> Tensor:
    """exp(x)"""
    y = np.exp(x.data)
    return _result(y, (x,), lambda g: (g * y,), "exp")


@register("log")
def log(x: Tensor) -> Tensor:
    """natural logarithm"""
    xd = x.data
    return _result(np.log(xd), (x,), lambda g: (g / xd,), "log")


@register("tanh")
def tanh(x: Tensor) -> Tensor:
    """hyperbolic tangent"""
    y = np.tanh(x.data)
    return _result(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # exp of a non-positive argument only
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)


@register("sigmoid")
def sigmoid(x: Tensor) -> Tensor:
    """logistic function"""
    y = _sigmoid(x.data)
    return _result(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


@register("softplus")
def softplus(x: Tensor) -> Tensor:
    """log(1 + exp(x)) as max(x, 0) + log1p(exp(-|x|))"""
    xd = x.data
    y = np.maximum(xd, 0) + np.log1p(np.exp(-np.abs(xd)))
    return _result(y, (x,), lambda g: (g * _sigmoid(xd),), "softplus")


@register("reciprocal")
def reciprocal(x: Tensor) -> Tensor:
    """1 / x"""
    y = 1.0 / x.data
    return _result(y, (x,), lambda g: (-g * y * y,), "reciprocal")


def silu(x: Tensor) -> Tensor:
    return x * sigmoid(x)


# ------------------------------------------------------------------- algebra


@register("matmul", "batched matrix product with numpy broadcasting rules")
def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim == 0 or b.ndim == 0:
        raise ShapeError(f"matmul: scalar operand, shapes {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"matmul: inner dimensions differ, shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        a2 = ad[None, :] if ad.ndim == 1 else ad
        b2 = bd[:, None] if bd.ndim == 1 else bd
        g2 = g
        if ad.ndim == 1:
            g2 = np.expand_dims(g2, -2)
        if bd.ndim == 1:
            g2 = np.expand_dims(g2, -1)
        ga = gb = None
        if a.requires_grad:
            ga = g2 @ np.swapaxes(b2, -1, -2)
            ga = unbroadcast(ga, a2.shape).reshape(ad.shape)
        if b.requires_grad:
            if a2.ndim > 2 and b2.ndim == 2:
                # fold batch axes into one contraction
                gb = a2.reshape(-1, a2.shape[-1]).T @ g2.reshape(-1, g2.shape[-1])
            else:
                gb = unbroadcast(np.swapaxes(a2, -1, -2) @ g2, b2.shape)
            gb = gb.reshape(bd.shape)
        return ga, gb

    return _result(ad @ bd, (a, b), bw, "matmul")


@register("reshape", "shape change preserving row-major order")
def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {src} as {tuple(shape)}") from None
    return _result(out, (x,), lambda g: (g.reshape(src),), "reshape")


@register("transpose", "axis permutation")
def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(range(x.ndim))[::-1]
    axes = tuple(a % x.ndim for a in axes)
    inv = tuple(np.argsort(axes))
    return _result(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),), "transpose")


def swapaxes(x: Tensor, a: int, b: int) -> Tensor:
    axes = list(range(x.ndim))
    axes[a], axes[b] = axes[b], axes[a]
    return transpose(x, axes)


@register("flip", "reverse the order of entries along one axis")
def flip(x: Tensor, axis: int) -> Tensor:
    return _result(np.flip(x.data, axis), (x,), lambda g: (np.flip(g, axis),), "flip")


@register("concatenate", "join tensors along an existing axis")
def concatenate(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    ref = tensors[0]
    ax = axis % ref.ndim
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(
            t.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != ax
        ):
            raise ShapeError(f"concatenate: shapes {ref.shape} and {t.shape} differ off axis {axis}")
    sizes = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, sizes, axis=ax))

    return _result(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), bw, "concatenate")


@register("slice", "basic (non-fancy) indexing")
def slice_(x: Tensor, index) -> Tensor:
    if not isinstance(index, tuple):
        index = (index,)
    for i in index:
        if not (isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis):
            raise TypeError(f"slice: unsupported index component {i!r}; only basic indexing")
    return _result(x.data[index], (x,), lambda g: (_SliceGrad(index, g),), "slice")


# ---------------------------------------------------------------- reductions


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


@register("sum", "sum over axes")
def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, x.ndim)
    src = x.shape

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, src),)

    return _result(x.data.sum(axis=axes, keepdims=keepdims), (x,), bw, "sum")


@register("mean", "arithmetic mean over axes")
def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, x.ndim)
    src = x.shape
    count = int(np.prod([src[a] for a in axes])) if axes else 1

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, src),)

    return _result(x.data.mean(axis=axes, keepdims=keepdims), (x,), bw, "mean")


# ------------------------------------------------------------ normalizations


@register("layer_norm", "normalize the last axis then apply gamma, beta")
def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: gamma {gamma.shape} / beta {beta.shape} vs last axis {d}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    denom = var + eps
    inv = np.where(denom > 0, 1.0 / np.sqrt(np.where(denom > 0, denom, 1.0)), 0.0).astype(xd.dtype)
    xhat = xc * inv
    gd = gamma.data

    def bw(g):
        gx = gg = gb = None
        if x.requires_grad:
            gh = g * gd
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        if gamma.requires_grad:
            gg = (g * xhat).reshape(-1, d).sum(axis=0)
        if beta.requires_grad:
            gb = g.reshape(-1, d).sum(axis=0)
        return gx, gg, gb

    return _result(xhat * gd + beta.data, (x, gamma, beta), bw, "layer_norm")


@register("l2_normalize", "scale to unit Euclidean norm along an axis")
def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    xd = x.data
    norm = np.sqrt((xd * xd).sum(axis=axis, keepdims=True))
    norm = np.maximum(norm, eps)
    y = xd / norm

    def bw(g):
        return ((g - y * (g * y).sum(axis=axis, keepdims=True)) / norm,)

    return _result(y, (x,), bw, "l2_normalize")


@register("softmax", "normalized exponential along an axis")
def softmax(x: Tensor, axis: int = -1) -> Tensor:
    xd = x.data
    e = np.exp(xd - xd.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _result(y, (x,), bw, "softmax")


# ------------------------------------------------------------------ backward


def _topological(root: Tensor) -> list[Tensor]:
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
    return order


def backward(loss: Tensor, leaves: Iterable[Tensor] | None = None):
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf.

    ``leaves`` that the loss does not depend on receive a zero gradient.
    When ``leaves`` is given, returns this loss's gradients for them in order,
    excluding anything already accumulated in ``.grad``.
    """
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if loss._consumed:
        raise RuntimeError("backward: graph already consumed; run a fresh forward pass")
    leaves = list(leaves) if leaves is not None else None
    order = _topological(loss) if loss.requires_grad else [loss]
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    owned: set[int] = {id(loss)}
    fresh: dict[int, np.ndarray] = {}

    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad:
                g = np.asarray(g, dtype=node.data.dtype).reshape(node.shape)
                fresh[id(node)] = g
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        contribs = node._backward(g)
        for parent, c in zip(node._parents, contribs):
            if c is None or not parent.requires_grad:
                continue
            key = id(parent)
            buf = grads.get(key)
            if isinstance(c, _SliceGrad):
                if buf is None:
                    buf = np.zeros(parent.shape, dtype=parent.data.dtype)
                    owned.add(key)
                elif key not in owned:
                    buf = np.array(buf)
                    owned.add(key)
                buf[c.index] += c.value
                grads[key] = buf
            elif buf is None:
                grads[key] = c
            elif key in owned:
                buf += c
            else:
                grads[key] = buf + c
                owned.add(key)

    for node in order:
        if node._backward is not None:
            node._backward = None
            node._parents = ()
            node._consumed = True
    loss._consumed = True

    if leaves is None:
        return None
    out = []
    for leaf in leaves:
        if leaf.grad is None:
            leaf.grad = np.zeros_like(leaf.data)
        g = fresh.get(id(leaf))
        out.append(np.zeros_like(leaf.data) if g is None else g.copy())
    return out
