"""Reverse-mode automatic differentiation over dense float64 numpy arrays.

A :class:`Tensor` wraps an ``ndarray`` and records the operation that produced
it.  Calling :func:`backward` on a scalar tensor walks the recorded graph in
reverse topological order and accumulates gradients into every leaf tensor
that has ``requires_grad=True``.

Leaf gradients *accumulate* across repeated ``backward`` calls, the same way
``torch`` does it; call ``zero_grad`` on the parameters between optimizer
steps.  Interior gradients are reset at the start of every ``backward`` call so
re-running backward on the same graph is well defined.

Only the broadcasting and indexing needed by the training losses is supported.
"""

from __future__ import annotations

import contextlib
from typing import Iterable, Sequence

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Dense float64 array participating in the gradient tape."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")
    __array_ufunc__ = None  # ndarray <op> Tensor dispatches to the Tensor's reflected op

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # -- construction helpers -------------------------------------------------
    @staticmethod
    def _make(data, parents: Sequence["Tensor"], backward) -> "Tensor":
        needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        out = Tensor(data, requires_grad=needs)
        if needs:
            out._parents = tuple(parents)
            out._backward = backward
        return out

    @property
    def shape(self) -> tuple:
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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- elementwise arithmetic ----------------------------------------------
    def __add__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def bw(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

        return Tensor._make(a.data + b.data, (a, b), bw)

    __radd__ = __add__

    def __sub__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def bw(g):
            return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

        return Tensor._make(a.data - b.data, (a, b), bw)

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __mul__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def bw(g):
            return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

        return Tensor._make(a.data * b.data, (a, b), bw)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        a, b = self, other
        out_data = a.data / b.data

        def bw(g):
            ga = g / b.data
            return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out_data, b.shape)

        return Tensor._make(out_data, (a, b), bw)

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __neg__(self):
        a = self
        return Tensor._make(-a.data, (a,), lambda g: (-g,))

    def __pow__(self, exponent):
        if isinstance(exponent, Tensor):
            raise TypeError("only constant exponents are supported")
        p = float(exponent)
        a = self
        out_data = a.data**p

        def bw(g):
            if p == 2.0:
                return (2.0 * g * a.data,)
            return (g * p * a.data ** (p - 1.0),)

        return Tensor._make(out_data, (a,), bw)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(as_tensor(other), self)

    # -- unary functions -------------------------------------------------------
    def exp(self):
        a = self
        out_data = np.exp(a.data)
        return Tensor._make(out_data, (a,), lambda g: (g * out_data,))

    def log(self):
        a = self
        return Tensor._make(np.log(a.data), (a,), lambda g: (g / a.data,))

    def sqrt(self):
        a = self
        out_data = np.sqrt(a.data)
        return Tensor._make(out_data, (a,), lambda g: (0.5 * g / out_data,))

    # -- reductions and shape ops ---------------------------------------------
    def sum(self, axis=None, keepdims: bool = False):
        a = self

        def bw(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, a.shape),)

        return Tensor._make(a.data.sum(axis=axis, keepdims=keepdims), (a,), bw)

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            n = self.data.size
        else:
            axes = (axis,) if isinstance(axis, int) else axis
            n = int(np.prod([self.shape[ax] for ax in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        return Tensor._make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))

    def transpose(self, *axes):
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        elif len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = np.argsort(axes)
        a = self
        return Tensor._make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))

    @property
    def T(self):
        return self.transpose()

    def __getitem__(self, idx):
        a = self
        out_data = a.data[idx]
        basic = _is_basic_index(idx)

        def bw(g):
            full = np.zeros_like(a.data)
            if basic:
                full[idx] += g
            else:
                np.add.at(full, idx, g)
            return (full,)

        return Tensor._make(out_data, (a,), bw)


def _raise_item(t: Tensor):
    raise ValueError(f"item() needs a single-element tensor, got shape {t.shape}")


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(i is None or i is Ellipsis or isinstance(i, (int, slice, np.integer)) for i in items)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    """A leaf tensor that receives gradients."""
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    # promote vectors the way numpy does, then drop the added axes again
    a2 = a.data[None, :] if a.ndim == 1 else a.data
    b2 = b.data[:, None] if b.ndim == 1 else b.data

    def bw(g):
        g2 = g
        if b.ndim == 1:
            g2 = np.expand_dims(g2, -1)
        if a.ndim == 1:
            g2 = np.expand_dims(g2, -2)
        ga = g2 @ np.swapaxes(b2, -1, -2)
        gb = np.swapaxes(a2, -1, -2) @ g2
        if a.ndim == 1:
            ga = ga.reshape(-1, a.shape[0]).sum(axis=0)
        if b.ndim == 1:
            gb = gb.reshape(-1, b.shape[0]).sum(axis=0)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor._make(a.data @ b.data, (a, b), bw)


def affine(x, weight: Tensor, bias: Tensor) -> Tensor:
    """``x @ weight + bias`` as a single tape node."""
    x = as_tensor(x)

    def bw(g):
        g2 = g.reshape(-1, g.shape[-1])
        x2 = x.data.reshape(-1, x.shape[-1])
        gx = (g @ weight.data.T) if x.requires_grad else None
        return gx, x2.T @ g2, g2.sum(axis=0)

    return Tensor._make(x.data @ weight.data + bias.data, (x, weight, bias), bw)


def prelu(x, slope: Tensor) -> Tensor:
    """``x`` where ``x >= 0`` else ``slope * x``; ``slope`` is a scalar tensor.

    At ``x == 0`` the non-negative branch is used for both value and gradient.
    """
    x, slope = as_tensor(x), as_tensor(slope)
    neg = x.data < 0
    mult = np.where(neg, slope.data, 1.0)
    out_data = x.data * mult

    def bw(g):
        gx = g * mult if x.requires_grad else None
        ga = np.vdot(g, np.minimum(x.data, 0.0)) if slope.requires_grad else 0.0
        return gx, np.reshape(ga, slope.shape)

    return Tensor._make(out_data, (x, slope), bw)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in ts], axis=axis)
    ax = axis % out_data.ndim
    bounds = np.cumsum([0] + [t.shape[ax] for t in ts])

    def bw(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(ts))
        )

    return Tensor._make(out_data, ts, bw)


def exp(x) -> Tensor:
    return as_tensor(x).exp()


def log(x) -> Tensor:
    return as_tensor(x).log()


def sqrt(x) -> Tensor:
    return as_tensor(x).sqrt()


def _topo_order(root: Tensor) -> list[Tensor]:
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


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every leaf reachable from the scalar ``loss``."""
    if not isinstance(loss, Tensor):
        raise TypeError("backward() expects a Tensor")
    if loss.data.size != 1:
        raise ValueError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            # leaf
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


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
