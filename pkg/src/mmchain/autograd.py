"""Dense float64 tensors with reverse-mode automatic differentiation.

Every op builds a node only when an input requires a gradient and grad mode
is enabled; :func:`no_grad` turns the engine into a thin numpy wrapper for
decoding and evaluation. Graphs are built fresh per minibatch and released
by :meth:`Tensor.backward`.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64

_GRAD_ENABLED = True
_DEBUG = False

# registry of differentiable ops, used by the gradient-check suite
OPS: dict[str, Callable] = {}


class ShapeError(ValueError):
    pass


class GraphError(RuntimeError):
    pass


def register(name: str):
    def deco(fn):
        OPS[name] = fn
        return fn
    return deco


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextlib.contextmanager
def debug_mode(enabled: bool = True):
    """Check every op output for non-finite values while active."""
    global _DEBUG
    prev, _DEBUG = _DEBUG, enabled
    try:
        yield
    finally:
        _DEBUG = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_consumed")
    __array_ufunc__ = None  # make ndarray <op> Tensor dispatch to the Tensor side

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        arr = np.asarray(data, dtype=DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._consumed = False

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

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # -- operators ----------------------------------------------------------
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, other)
    def __getitem__(self, idx): return index(self, idx)

    def sum(self, axis=None, keepdims=False): return tsum(self, axis, keepdims)
    def mean(self, axis=None, keepdims=False): return mean(self, axis, keepdims)
    def reshape(self, *shape): return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    # -- reverse pass -------------------------------------------------------
    def backward(self) -> None:
        if self.data.size != 1:
            raise GraphError(f"backward needs a scalar loss, got shape {self.shape}")
        if self._consumed:
            raise GraphError("backward called twice on the same graph; rebuild the loss first")
        self._consumed = True
        if not self.requires_grad:
            return
        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in order:
            if node._backward is _released:
                raise GraphError("graph already consumed by an earlier backward; rebuild the loss first")
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                # leaf: accumulate
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
            node._backward = _released
            node._parents = ()


def _released(g):  # sentinel for nodes whose graph was freed
    raise GraphError("graph already consumed")


def _topological_order(root: Tensor) -> list[Tensor]:
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


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    if _DEBUG and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"{op}: produced non-finite values")
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _check_finite(op: str, *ts: Tensor) -> None:
    if _DEBUG:
        for t in ts:
            if not np.all(np.isfinite(t.data)):
                raise FloatingPointError(f"{op}: non-finite input of shape {t.shape}")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


def _broadcast_check(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# -- elementwise binary -------------------------------------------------------

@register("add")
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("add", a, b)
    _check_finite("add", a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


@register("sub")
def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("sub", a, b)
    _check_finite("sub", a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


@register("mul")
def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("mul", a, b)
    _check_finite("mul", a, b)
    ad, bd = a.data, b.data

    def backward(g):
        return (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(g * ad, bd.shape) if b.requires_grad else None)
    return _make(ad * bd, (a, b), backward, "mul")


@register("neg")
def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


@register("matmul")
def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes (``np.matmul`` semantics).

    ``(..., n, k) @ (k, m) -> (..., n, m)``; a 1-d right operand contracts
    the last axis.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or b.ndim == 0 or a.shape[-1] != b.shape[0 if b.ndim == 1 else -2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    _check_finite("matmul", a, b)
    ad, bd = a.data, b.data
    out = ad @ bd

    def backward(g):
        if bd.ndim == 1:
            ga = g[..., None] * bd if a.requires_grad else None
            gb = np.tensordot(g, ad, axes=(tuple(range(g.ndim)), tuple(range(g.ndim)))) if b.requires_grad else None
            return ga, gb
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            if ad.ndim == 1:
                gb = np.outer(ad, g)
            else:
                gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb
    return _make(out, (a, b), backward, "matmul")


# -- elementwise unary --------------------------------------------------------

@register("tanh")
def tanh(a) -> Tensor:
    a = as_tensor(a)
    _check_finite("tanh", a)
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@register("sigmoid")
def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    _check_finite("sigmoid", a)
    y = _sigmoid(a.data)
    return _make(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


@register("relu")
def relu(a) -> Tensor:
    """``max(0, a)``; the hinge in ranking losses."""
    a = as_tensor(a)
    _check_finite("relu", a)
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


@register("log")
def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise ValueError("log: input must be strictly positive")
    x = a.data
    return _make(np.log(x), (a,), lambda g: (g / x,), "log")


@register("exp")
def exp(a) -> Tensor:
    a = as_tensor(a)
    _check_finite("exp", a)
    y = np.exp(a.data)
    return _make(y, (a,), lambda g: (g * y,), "exp")


@register("softmax")
def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    _check_finite("softmax", a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)
    return _make(y, (a,), backward, "softmax")


@register("log_softmax")
def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    _check_finite("log_softmax", a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse
    p = np.exp(y)

    def backward(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)
    return _make(y, (a,), backward, "log_softmax")


@register("bce_with_logits")
def bce_with_logits(logits, targets) -> Tensor:
    """Elementwise binary cross-entropy on logits; targets are constants."""
    logits = as_tensor(logits)
    t = as_tensor(targets).data
    if logits.shape != t.shape:
        raise ShapeError(f"bce_with_logits: logits {logits.shape} vs targets {t.shape}")
    x = logits.data
    loss = np.maximum(x, 0.0) - x * t + np.log1p(np.exp(-np.abs(x)))
    return _make(loss, (logits,), lambda g: (g * (_sigmoid(x) - t),), "bce_with_logits")


# -- reductions and shape ops -------------------------------------------------

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


@register("sum")
def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    axes = _norm_axis(axis, a.ndim)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)
    return _make(a.data.sum(axis=axes, keepdims=keepdims), (a,), backward, "sum")


@register("mean")
def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    n = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


@register("reshape")
def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {old} into {tuple(shape)}") from None
    return _make(out, (a,), lambda g: (g.reshape(old),), "reshape")


@register("transpose")
def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


@register("concat")
def concat(tensors: Iterable, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat: empty input list")
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in ts]} on axis {axis}") from None
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=axis))
    return _make(out, ts, backward, "concat")


@register("stack")
def stack(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.stack([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError(f"stack: mismatched shapes {[t.shape for t in ts]}") from None

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))
    return _make(out, ts, backward, "stack")


@register("index")
def index(a, idx) -> Tensor:
    """Basic or advanced indexing (slices, ints, integer arrays)."""
    a = as_tensor(a)
    shape = a.shape
    try:
        out = a.data[idx]
    except IndexError as exc:
        raise ShapeError(f"index: {exc} for shape {shape}") from None

    parts = idx if isinstance(idx, tuple) else (idx,)
    basic = all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in parts)

    def backward(g):
        full = np.zeros(shape, dtype=DTYPE)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)
    return _make(np.array(out, dtype=DTYPE), (a,), backward, "index")


@register("embedding")
def embedding(weight: Tensor, ids) -> Tensor:
    """Row lookup ``weight[ids]`` with scatter-add backward."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise ShapeError(f"embedding: ids out of range for table of {weight.shape[0]} rows")
    wshape = weight.shape

    def backward(g):
        full = np.zeros(wshape, dtype=DTYPE)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, wshape[1]))
        return (full,)
    return _make(weight.data[ids], (weight,), backward, "embedding")


@register("pick")
def pick(a, ids) -> Tensor:
    """Select ``a[..., ids[...]]`` along the last axis."""
    a = as_tensor(a)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.shape != a.shape[:-1]:
        raise ShapeError(f"pick: ids shape {ids.shape} does not match {a.shape[:-1]}")
    out = np.take_along_axis(a.data, ids[..., None], axis=-1)[..., 0]
    shape = a.shape

    def backward(g):
        full = np.zeros(shape, dtype=DTYPE)
        np.put_along_axis(full, ids[..., None], g[..., None], axis=-1)
        return (full,)
    return _make(out, (a,), backward, "pick")


@register("squared_l2")
def squared_l2(a, b, axis=None) -> Tensor:
    """Squared Euclidean distance ``sum((a - b)**2)`` over ``axis`` (all by default)."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("squared_l2", a, b)
    diff = a.data - b.data
    axes = _norm_axis(axis, diff.ndim)
    sa, sb = a.shape, b.shape

    def backward(g):
        g2 = 2.0 * np.expand_dims(g, axes) * diff
        return (_unbroadcast(g2, sa) if a.requires_grad else None,
                _unbroadcast(-g2, sb) if b.requires_grad else None)
    return _make((diff * diff).sum(axis=axes), (a, b), backward, "squared_l2")


@register("gru_cell")
def gru_cell(gx, h, w_h, b_h, mask=None) -> Tensor:
    """Fused gated recurrent update.

    ``gx`` holds the precomputed input projections ``x @ W_x + b_x`` laid
    out as ``[reset | update | candidate]`` (shape ``(B, 3H)``). With a
    ``(B,)`` mask, rows where the mask is 0 carry ``h`` through unchanged.
    """
    gx, h, w_h, b_h = as_tensor(gx), as_tensor(h), as_tensor(w_h), as_tensor(b_h)
    H = h.shape[-1]
    if gx.shape[-1] != 3 * H or w_h.shape != (H, 3 * H) or b_h.shape != (3 * H,):
        raise ShapeError(f"gru_cell: gx {gx.shape}, h {h.shape}, w_h {w_h.shape}, b_h {b_h.shape}")
    _check_finite("gru_cell", gx, h)
    hd = h.data
    gh = hd @ w_h.data + b_h.data
    xd = gx.data
    r = _sigmoid(xd[:, :H] + gh[:, :H])
    z = _sigmoid(xd[:, H:2 * H] + gh[:, H:2 * H])
    ghn = gh[:, 2 * H:]
    n = np.tanh(xd[:, 2 * H:] + r * ghn)
    new = (1.0 - z) * n + z * hd
    if mask is not None:
        m = np.asarray(mask, dtype=DTYPE).reshape(-1, 1)
        out = m * new + (1.0 - m) * hd
    else:
        m = None
        out = new

    def backward(g):
        gn_out = g if m is None else g * m
        dn = gn_out * (1.0 - z)
        dz = gn_out * (hd - n)
        da_n = dn * (1.0 - n * n)
        dr = da_n * ghn
        da_r = dr * r * (1.0 - r)
        da_z = dz * z * (1.0 - z)
        dgx = np.concatenate([da_r, da_z, da_n], axis=1)
        dgh = np.concatenate([da_r, da_z, da_n * r], axis=1)
        dh = dgh @ w_h.data.T + gn_out * z
        if m is not None:
            dh = dh + g * (1.0 - m)
        return (dgx,
                dh,
                hd.T @ dgh if w_h.requires_grad else None,
                dgh.sum(axis=0) if b_h.requires_grad else None)
    return _make(out, (gx, h, w_h, b_h), backward, "gru_cell")


def grad_of(t: Tensor) -> np.ndarray:
    """Gradient of ``t`` or zeros when it was never reached."""
    return np.zeros_like(t.data) if t.grad is None else t.grad
