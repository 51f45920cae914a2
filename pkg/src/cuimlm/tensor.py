"""Small reverse-mode autodiff over float64 numpy arrays.

Every primitive computes its value eagerly and, when any input lives on a
:class:`Tape`, appends a node holding a backward closure. :func:`backward`
walks the tape in reverse and returns gradients keyed by parameter name.

>>> tape = Tape()
>>> x = tape.parameter("x", np.array([1.0, 2.0]))
>>> grads = backward(tape, total(x))
>>> grads["x"].tolist()
[1.0, 1.0]
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import erf, expit

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("value", "tape", "node")

    def __init__(self, value, tape: Optional["Tape"] = None, node: int = -1):
        self.value = np.asarray(value, dtype=np.float64)
        self.tape = tape
        self.node = node

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def requires_grad(self) -> bool:
        return self.tape is not None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, node={self.node})"

    def __add__(self, other):
        return add_broadcast(self, _lift(other))

    __radd__ = __add__

    def __matmul__(self, other):
        return matmul(self, _lift(other))

    def __mul__(self, factor: float):
        return scale(self, factor)

    __rmul__ = __mul__


def constant(value) -> Tensor:
    return Tensor(value)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of primitive applications.

    Nodes are appended as operations run, so inputs always precede outputs.
    """

    def __init__(self):
        self._parents: list = []
        self._backward: list = []
        self._params: dict = {}

    def __len__(self) -> int:
        return len(self._parents)

    @property
    def parameters(self) -> dict:
        return self._params

    def parameter(self, name: str, value) -> Tensor:
        if name in self._params:
            raise ValueError(f"parameter {name!r} already registered")
        t = self._push(np.asarray(value, dtype=np.float64), (), None)
        self._params[name] = t
        return t

    def record(self, value, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
        """Append a custom operation. ``backward_fn(grad)`` returns one gradient
        (or None) per parent."""
        return self._push(value, tuple(parents), backward_fn)

    def _push(self, value, parents, backward_fn) -> Tensor:
        node = len(self._parents)
        self._parents.append(parents)
        self._backward.append(backward_fn)
        return Tensor(value, self, node)


def _tape_of(*tensors: Tensor) -> Optional[Tape]:
    for t in tensors:
        if t.tape is not None:
            return t.tape
    return None


def apply(value, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Wrap ``value`` as the output of an op; record it only if a parent is tracked."""
    tape = _tape_of(*parents)
    if tape is None:
        return Tensor(value)
    return tape.record(value, parents, backward_fn)


def backward(tape: Tape, loss: Tensor) -> dict:
    """Gradients of a scalar ``loss`` with respect to every registered parameter.

    Parameters that do not influence the loss get zero arrays.
    """
    if loss.value.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if loss.tape is not tape:
        raise ValueError("backward: loss was not recorded on this tape")
    grads: list = [None] * (loss.node + 1)
    grads[loss.node] = np.ones_like(loss.value)
    for node in range(loss.node, -1, -1):
        g = grads[node]
        fn = tape._backward[node]
        if g is None or fn is None:
            continue
        parents = tape._parents[node]
        for parent, pg in zip(parents, fn(g)):
            if pg is None or parent.tape is None:
                continue
            acc = grads[parent.node]
            grads[parent.node] = pg if acc is None else acc + pg
    out = {}
    for name, t in tape._params.items():
        g = grads[t.node] if t.node < len(grads) else None
        out[name] = np.zeros_like(t.value) if g is None else np.asarray(g, dtype=np.float64).reshape(t.shape)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------- primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        out = np.matmul(a.value, b.value)
    except ValueError as exc:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from exc
    av, bv = a.value, b.value

    def grad_fn(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(bv, -1, -2)), av.shape) if a.tape is not None else None
        gb = _unbroadcast(np.matmul(np.swapaxes(av, -1, -2), g), bv.shape) if b.tape is not None else None
        return ga, gb

    return apply(out, (a, b), grad_fn)


def add_broadcast(a: Tensor, b: Tensor) -> Tensor:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"add_broadcast: incompatible shapes {a.shape} and {b.shape}") from exc
    sa, sb = a.shape, b.shape
    return apply(a.value + b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def scale(x: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    return apply(x.value * factor, (x,), lambda g: (g * factor,))


def gather_rows(table: Tensor, ids) -> Tensor:
    """``table[ids]`` for a 2-D table; backward scatter-adds into the source rows."""
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"gather_rows: table must be 2-D, got shape {table.shape}")
    n = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        raise IndexError(f"gather_rows: ids outside [0, {n}) for table of shape {table.shape}")
    shape = table.shape

    def grad_fn(g):
        out = np.zeros(shape)
        np.add.at(out, ids.ravel(), g.reshape(-1, shape[1]))
        return (out,)

    return apply(table.value[ids], (table,), grad_fn)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-12) -> Tensor:
    """Normalize over the last axis with population variance."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: gain/bias {gain.shape}/{bias.shape} vs input {x.shape}")
    mu = x.value.mean(axis=-1, keepdims=True)
    centered = x.value - mu
    rstd = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * rstd
    gv = gain.value
    out = xhat * gv + bias.value

    def grad_fn(g):
        gx = g * gv
        dx = rstd * (gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return apply(out, (x, gain, bias), grad_fn)


def softmax_rows(x: Tensor) -> Tensor:
    shifted = x.value - x.value.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def grad_fn(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return apply(y, (x,), grad_fn)


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x)."""
    xv = x.value
    cdf = 0.5 * (1.0 + erf(xv / _SQRT2))

    def grad_fn(g):
        return (g * (cdf + xv * _INV_SQRT_2PI * np.exp(-0.5 * xv * xv)),)

    return apply(xv * cdf, (x,), grad_fn)


def sigmoid(x: Tensor) -> Tensor:
    s = expit(x.value)
    return apply(s, (x,), lambda g: (g * s * (1.0 - s),))


def transpose(x: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    """Permute axes; the default swaps the last two."""
    if axes is None:
        if x.ndim < 2:
            raise ShapeError(f"transpose: need at least 2 dims, got shape {x.shape}")
        axes = list(range(x.ndim - 2)) + [x.ndim - 1, x.ndim - 2]
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for shape {x.shape}")
    inverse = tuple(np.argsort(axes))
    return apply(np.transpose(x.value, axes), (x,), lambda g: (np.transpose(g, inverse),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    shapes = [t.shape for t in tensors]
    try:
        out = np.concatenate([t.value for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: incompatible shapes {shapes} along axis {axis}") from exc
    bounds = np.cumsum([s[axis] for s in shapes])[:-1]

    def grad_fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return apply(out, tuple(tensors), grad_fn)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape
    try:
        out = x.value.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot reshape {src} to {tuple(shape)}") from exc
    return apply(out, (x,), lambda g: (g.reshape(src),))


def total(x: Tensor) -> Tensor:
    src = x.shape
    return apply(np.asarray(x.value.sum()), (x,), lambda g: (np.broadcast_to(g, src).copy(),))


def dot(a: Tensor, b: Tensor) -> Tensor:
    """Full contraction sum(a * b) of two equally shaped tensors."""
    if a.shape != b.shape:
        raise ShapeError(f"dot: incompatible shapes {a.shape} and {b.shape}")
    av, bv = a.value, b.value
    return apply(np.asarray(np.sum(av * bv)), (a, b), lambda g: (g * bv, g * av))
