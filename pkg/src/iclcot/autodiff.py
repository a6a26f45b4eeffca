"""Reverse-mode automatic differentiation over numpy arrays.

A Tensor wraps an ndarray and records the operation graph as it is built;
GradientTape registers named parameters and `backward` walks the graph once
to return their gradients. The op set is exactly what the transformer and
the selection policy need: arithmetic, matmul, relu/gelu/tanh, reductions,
reshape/transpose/indexing, layer_norm and masked softmax.

The engine is dtype-generic: the model trains in float32, gradient checks
run the same graphs in float64.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, ShapeError


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


class Tensor:
    """Array node in the recorded computation graph."""

    __slots__ = ("data", "grad", "_parents", "_vjp", "name")

    def __init__(
        self,
        data: np.ndarray,
        parents: tuple["Tensor", ...] = (),
        vjp: Callable[[np.ndarray], tuple[np.ndarray, ...]] | None = None,
        name: str | None = None,
    ):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self._parents = parents
        self._vjp = vjp
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    # -- arithmetic ---------------------------------------------------------

    def _coerce(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.dtype))

    def __add__(self, other) -> "Tensor":
        other = self._coerce(other)
        out_data = self.data + other.data
        sa, sb = self.shape, other.shape
        return Tensor(
            out_data,
            (self, other),
            lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
        )

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return Tensor(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other) -> "Tensor":
        return self + (-self._coerce(other))

    def __rsub__(self, other) -> "Tensor":
        return self._coerce(other) + (-self)

    def __mul__(self, other) -> "Tensor":
        other = self._coerce(other)
        a, b = self.data, other.data
        sa, sb = self.shape, other.shape
        return Tensor(
            a * b,
            (self, other),
            lambda g: (_unbroadcast(g * b, sa), _unbroadcast(g * a, sb)),
        )

    __rmul__ = __mul__

    def __truediv__(self, scalar) -> "Tensor":
        if isinstance(scalar, Tensor):
            raise ContractError("tensor/tensor division is not supported; multiply by a reciprocal")
        return self * (1.0 / float(scalar))

    def __matmul__(self, other) -> "Tensor":
        other = self._coerce(other)
        a, b = self.data, other.data
        if a.ndim < 2 or b.ndim < 2:
            raise ShapeError("tensor matmul needs >= 2-D operands")
        if a.shape[-1] != b.shape[-2]:
            raise ShapeError(f"matmul shapes incompatible: {a.shape} @ {b.shape}")
        out = np.matmul(a, b)
        sa, sb = a.shape, b.shape

        def vjp(g: np.ndarray):
            ga = _unbroadcast(np.matmul(g, b.swapaxes(-1, -2)), sa)
            gb = _unbroadcast(np.matmul(a.swapaxes(-1, -2), g), sb)
            return ga, gb

        return Tensor(out, (self, other), vjp)

    # -- nonlinearities ------------------------------------------------------

    def relu(self) -> "Tensor":
        mask = self.data > 0
        return Tensor(
            np.where(mask, self.data, np.array(0, dtype=self.dtype)),
            (self,),
            lambda g: (g * mask,),
        )

    def tanh(self) -> "Tensor":
        y = np.tanh(self.data)
        return Tensor(y, (self,), lambda g: (g * (1.0 - y * y),))

    def gelu(self) -> "Tensor":
        # tanh form: 0.5 x (1 + tanh(c (x + 0.044715 x^3)))
        x = self.data
        c = float(np.sqrt(2.0 / np.pi))
        u = c * (x + 0.044715 * x * x * x)
        t = np.tanh(u)
        y = 0.5 * x * (1.0 + t)

        def vjp(g: np.ndarray):
            du = c * (1.0 + 3.0 * 0.044715 * x * x)
            dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
            return (g * dy.astype(x.dtype, copy=False),)

        return Tensor(y.astype(x.dtype, copy=False), (self,), vjp)

    # -- reductions ----------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        out = self.data.sum(axis=axis, keepdims=keepdims)
        shape, dt = self.shape, self.dtype

        def vjp(g: np.ndarray):
            gg = np.asarray(g, dtype=dt)
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            return (np.broadcast_to(gg, shape).copy(),)

        return Tensor(out, (self,), vjp)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        n = self.data.size if axis is None else np.prod(
            [self.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))]
        )
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    # -- structure -----------------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        return Tensor(
            self.data.reshape(shape), (self,), lambda g: (g.reshape(old),)
        )

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = tuple(np.argsort(axes))
        return Tensor(
            np.ascontiguousarray(self.data.transpose(axes)),
            (self,),
            lambda g: (g.transpose(inv),),
        )

    def __getitem__(self, idx) -> "Tensor":
        out = self.data[idx]
        shape, dt = self.shape, self.dtype
        fancy = isinstance(idx, np.ndarray) or (
            isinstance(idx, tuple) and any(isinstance(i, (np.ndarray, list)) for i in idx)
        )

        def vjp(g: np.ndarray):
            gx = np.zeros(shape, dtype=dt)
            if fancy:
                np.add.at(gx, idx, g)  # duplicates accumulate
            else:
                gx[idx] = g
            return (gx,)

        return Tensor(out, (self,), vjp)

    # -- fused neural-net ops --------------------------------------------------

    def layer_norm(self, gamma: "Tensor", beta: "Tensor", eps: float = 1e-5) -> "Tensor":
        """Normalize the last axis to zero mean / unit variance, then scale+shift."""
        x = self.data
        n = x.shape[-1]
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv
        y = gamma.data * xhat + beta.data
        batch_axes = tuple(range(x.ndim - 1))

        def vjp(g: np.ndarray):
            dgamma = (g * xhat).sum(axis=batch_axes)
            dbeta = g.sum(axis=batch_axes)
            dxhat = g * gamma.data
            dx = inv * (
                dxhat
                - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
            )
            return dx.astype(x.dtype, copy=False), dgamma, dbeta

        return Tensor(y.astype(x.dtype, copy=False), (self, gamma, beta), vjp)

    def masked_softmax(self, mask: np.ndarray | None = None) -> "Tensor":
        """Softmax over the last axis; `mask` is added to the logits first
        (use -inf for disallowed positions, which end up with exactly 0 weight)."""
        z = self.data if mask is None else self.data + mask
        z = z - np.max(z, axis=-1, keepdims=True)
        e = np.exp(z)
        y = e / e.sum(axis=-1, keepdims=True)

        def vjp(g: np.ndarray):
            inner = (g * y).sum(axis=-1, keepdims=True)
            return ((g - inner) * y,)

        return Tensor(y.astype(self.dtype, copy=False), (self,), vjp)


class GradientTape:
    """Registry of named trainable parameters for one recorded forward pass."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}

    def param(self, name: str, array: np.ndarray) -> Tensor:
        if name in self.params:
            raise ContractError(f"parameter {name!r} registered twice")
        t = Tensor(np.asarray(array), name=name)
        self.params[name] = t
        return t


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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(tape: GradientTape, loss: Tensor) -> dict[str, np.ndarray]:
    """Gradients of a scalar `loss` with respect to every tape parameter."""
    if loss.data.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss.shape}")
    order = _topo_order(loss)
    for node in order:
        node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node.grad is None or node._vjp is None:
            continue
        for parent, g in zip(node._parents, node._vjp(node.grad)):
            if parent.grad is None:
                parent.grad = np.array(g, dtype=parent.dtype, copy=True)
            else:
                parent.grad += g
    out: dict[str, np.ndarray] = {}
    for name, p in tape.params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.data.shape}")
        out[name] = g
    return out
