"""Dense float64 tensors with reverse-mode automatic differentiation.

Small numpy-backed substrate for the rest of the library: every array is a
``Tensor``, each operation links its output to its parents together with a
vector-Jacobian closure, and ``Tensor.backward`` replays the recorded graph
in reverse topological order.  Shapes follow numpy's trailing-axis broadcast
rules and nothing else; all storage is float64.

Operations guard their own domains (division by zero, sqrt of negatives,
axis bounds) so that a forward pass over finite inputs never manufactures
NaNs silently.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

Array = np.ndarray
VjpFn = Callable[[Array], Sequence[Array]]


class Tensor:
    """A float64 ndarray plus the bookkeeping needed for backprop.

    ``requires_grad`` marks leaves the caller wants gradients for; it is
    propagated automatically to results of operations on such tensors.
    ``grad`` accumulates across backward calls until ``zero_grad``.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data: Array = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Array | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: VjpFn | None = None

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
        return float(self.data.item())

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: Array | None = None) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``."""
        if grad is None:
            if self.size != 1:
                raise ValueError("backward() without an explicit gradient needs a scalar output")
            grad = np.ones_like(self.data)
        seed = np.asarray(grad, dtype=np.float64)
        if seed.shape != self.shape:
            raise ValueError(f"seed gradient shape {seed.shape} does not match output shape {self.shape}")
        Graph.trace(self).run_backward(seed)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # operator sugar; all arithmetic goes through the module-level ops
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return multiply(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __truediv__(self, other):
        return divide(self, other)

    def __rtruediv__(self, other):
        return divide(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def sum(self, axis=None, keepdims: bool = False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return reduce_mean(self, axis, keepdims)

    def max(self, axis=None, keepdims: bool = False):
        return reduce_max(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes: Sequence[int] | None = None):
        return transpose(self, axes)


class Graph:
    """Topologically ordered record of the operations reaching one output.

    ``nodes`` lists every tensor on a gradient path, parents strictly before
    children, so iterating in reverse replays all adjoint rules exactly once.
    """

    __slots__ = ("nodes",)

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def trace(cls, root: Tensor) -> "Graph":
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        return cls(order)

    def run_backward(self, seed: Array) -> None:
        if not self.nodes:
            return
        root = self.nodes[-1]
        _accumulate(root, seed)
        for node in reversed(self.nodes):
            if node._vjp is None or node.grad is None:
                continue
            for parent, piece in zip(node._parents, node._vjp(node.grad)):
                if parent.requires_grad:
                    _accumulate(parent, piece)


def _accumulate(t: Tensor, piece: Array) -> None:
    if t.grad is None:
        t.grad = np.array(piece, dtype=np.float64)
    else:
        t.grad += piece


def node(data: Array, parents: Sequence[Tensor], vjp: VjpFn) -> Tensor:
    """Create an operation result wired into the autodiff graph.

    Exposed so higher modules (activations, losses) can register bespoke
    adjoint rules without touching Tensor internals.
    """
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _ensure(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum ``grad`` down to ``shape``, inverting a trailing-axis broadcast."""
    grad = np.asarray(grad, dtype=np.float64)
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"shapes {a.shape} and {b.shape} do not broadcast") from None


def _normalize_axis(axis, ndim: int):
    if axis is None:
        return None
    if not isinstance(axis, int):
        raise ValueError(f"axis must be an int or None, got {axis!r}")
    if not -ndim <= axis < ndim:
        raise ValueError(f"axis {axis} out of range for rank {ndim}")
    return axis % ndim if ndim else 0


# ---------------------------------------------------------------------------
# binary / unary elementwise operations


def add(a, b) -> Tensor:
    a, b = _ensure(a), _ensure(b)
    _check_broadcast(a, b)

    def vjp(g):
        return (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))

    return node(a.data + b.data, (a, b), vjp)


def subtract(a, b) -> Tensor:
    a, b = _ensure(a), _ensure(b)
    _check_broadcast(a, b)

    def vjp(g):
        return (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))

    return node(a.data - b.data, (a, b), vjp)


def multiply(a, b) -> Tensor:
    a, b = _ensure(a), _ensure(b)
    _check_broadcast(a, b)

    def vjp(g):
        return (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape))

    return node(a.data * b.data, (a, b), vjp)


def divide(a, b) -> Tensor:
    a, b = _ensure(a), _ensure(b)
    _check_broadcast(a, b)
    if np.any(b.data == 0.0):
        raise ValueError("divide: denominator contains zeros")
    data = a.data / b.data

    def vjp(g):
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        )

    return node(data, (a, b), vjp)


def scale(x, factor: float) -> Tensor:
    x = _ensure(x)
    factor = float(factor)

    def vjp(g):
        return (g * factor,)

    return node(x.data * factor, (x,), vjp)


def maximum(a, b) -> Tensor:
    """Elementwise max; ties route their gradient to the first operand."""
    a, b = _ensure(a), _ensure(b)
    _check_broadcast(a, b)
    take_a = a.data >= b.data

    def vjp(g):
        return (
            _unbroadcast(np.where(take_a, g, 0.0), a.shape),
            _unbroadcast(np.where(take_a, 0.0, g), b.shape),
        )

    return node(np.maximum(a.data, b.data), (a, b), vjp)


def relu(x) -> Tensor:
    return maximum(x, 0.0)


def exp(x) -> Tensor:
    x = _ensure(x)
    data = np.exp(x.data)

    def vjp(g):
        return (g * data,)

    return node(data, (x,), vjp)


def log(x) -> Tensor:
    x = _ensure(x)
    if np.any(x.data <= 0.0):
        raise ValueError("log: inputs must be strictly positive")

    def vjp(g):
        return (g / x.data,)

    return node(np.log(x.data), (x,), vjp)


def sqrt(x) -> Tensor:
    x = _ensure(x)
    if np.any(x.data < 0.0):
        raise ValueError("sqrt: inputs must be non-negative")
    data = np.sqrt(x.data)

    def vjp(g):
        # derivative is unbounded at 0; callers keep an epsilon inside
        return (g / (2.0 * np.maximum(data, np.finfo(np.float64).tiny)),)

    return node(data, (x,), vjp)


def power(x, exponent: float) -> Tensor:
    x = _ensure(x)
    exponent = float(exponent)
    data = np.power(x.data, exponent)

    def vjp(g):
        return (g * exponent * np.power(x.data, exponent - 1.0),)

    return node(data, (x,), vjp)


def _sigmoid_np(x: Array) -> Array:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x) -> Tensor:
    x = _ensure(x)
    data = _sigmoid_np(x.data)

    def vjp(g):
        return (g * data * (1.0 - data),)

    return node(data, (x,), vjp)


def tanh(x) -> Tensor:
    x = _ensure(x)
    data = np.tanh(x.data)

    def vjp(g):
        return (g * (1.0 - data * data),)

    return node(data, (x,), vjp)


# ---------------------------------------------------------------------------
# matmul and shape operations


def _swap(x: Array) -> Array:
    return np.swapaxes(x, -1, -2)


def matmul(a, b) -> Tensor:
    a, b = _ensure(a), _ensure(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul requires rank >= 2 operands")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul inner extents disagree: {a.shape} @ {b.shape}")
    data = np.matmul(a.data, b.data)

    def vjp(g):
        # Folding batch axes into rows turns the broadcast-weight adjoint
        # into one GEMM instead of a stack of per-batch products.
        if b.ndim == 2 and a.ndim > 2:
            grad_b = np.matmul(a.data.reshape(-1, a.shape[-1]).T, g.reshape(-1, g.shape[-1]))
        else:
            grad_b = _unbroadcast(np.matmul(_swap(a.data), g), b.shape)
        grad_a = _unbroadcast(np.matmul(g, _swap(b.data)), a.shape)
        return (grad_a, grad_b)

    return node(data, (a, b), vjp)


def reshape(x, shape: Sequence[int]) -> Tensor:
    x = _ensure(x)
    shape = tuple(int(s) for s in shape)
    data = x.data.reshape(shape)

    def vjp(g):
        return (g.reshape(x.shape),)

    return node(data, (x,), vjp)


def transpose(x, axes: Sequence[int] | None = None) -> Tensor:
    x = _ensure(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(int(a) for a in axes)
    inverse = tuple(np.argsort(axes))

    def vjp(g):
        return (np.transpose(g, inverse),)

    return node(np.transpose(x.data, axes), (x,), vjp)


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    parts = [_ensure(p) for p in parts]
    if not parts:
        raise ValueError("concat of zero tensors")
    axis = _normalize_axis(axis, parts[0].ndim)
    data = np.concatenate([p.data for p in parts], axis=axis)
    offsets = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def vjp(g):
        return tuple(np.split(g, offsets, axis=axis))

    return node(data, tuple(parts), vjp)


def take_rows(table, ids) -> Tensor:
    """Row lookup (embedding gather); adjoint scatter-adds into the table."""
    table = _ensure(table)
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ValueError("take_rows expects a rank-2 table")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ValueError("take_rows: index out of range")
    data = table.data[ids]

    def vjp(g):
        acc = np.zeros_like(table.data)
        np.add.at(acc, ids, g)
        return (acc,)

    return node(data, (table,), vjp)


# ---------------------------------------------------------------------------
# reductions


def reduce_sum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _ensure(x)
    ax = _normalize_axis(axis, x.ndim)
    data = x.data.sum(axis=ax, keepdims=keepdims)

    def vjp(g):
        gg = np.asarray(g)
        if ax is not None and not keepdims:
            gg = np.expand_dims(gg, ax)
        return (np.broadcast_to(gg, x.shape).copy(),)

    return node(data, (x,), vjp)


def reduce_mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _ensure(x)
    ax = _normalize_axis(axis, x.ndim)
    count = x.size if ax is None else x.shape[ax]
    data = x.data.mean(axis=ax, keepdims=keepdims)

    def vjp(g):
        gg = np.asarray(g)
        if ax is not None and not keepdims:
            gg = np.expand_dims(gg, ax)
        return (np.broadcast_to(gg, x.shape).copy() / count,)

    return node(data, (x,), vjp)


def reduce_max(x, axis=None, keepdims: bool = False) -> Tensor:
    """Max reduction; the gradient routes to the first maximal entry."""
    x = _ensure(x)
    ax = _normalize_axis(axis, x.ndim)
    data = x.data.max(axis=ax, keepdims=keepdims)

    def vjp(g):
        gg = np.asarray(g)
        if ax is None:
            onehot = np.zeros(x.size)
            onehot[int(np.argmax(x.data.reshape(-1)))] = 1.0
            return ((onehot * float(gg)).reshape(x.shape),)
        idx = np.expand_dims(np.argmax(x.data, axis=ax), ax)
        onehot = np.zeros_like(x.data)
        np.put_along_axis(onehot, idx, 1.0, axis=ax)
        if not keepdims:
            gg = np.expand_dims(gg, ax)
        return (onehot * gg,)

    return node(data, (x,), vjp)


# ---------------------------------------------------------------------------
# serialization + finite-difference checking


def to_snapshot(t: Tensor) -> dict:
    """JSON-ready dump {shape, data}; floats round-trip exactly via repr."""
    return {"shape": list(t.shape), "data": t.data.reshape(-1).tolist()}


def from_snapshot(payload: dict) -> Tensor:
    shape = tuple(int(s) for s in payload["shape"])
    data = np.asarray(payload["data"], dtype=np.float64).reshape(shape)
    return Tensor(data)


def grad_check(f: Callable[[Tensor], Tensor], at: Tensor, step: float = 1e-5) -> float:
    """Worst relative disagreement between backprop and central differences.

    For each coordinate of ``at`` the analytic gradient of the scalar
    ``f(at)`` is compared against (f(x+h) - f(x-h)) / 2h with the error
    normalized by max(1, |analytic|).  Raises if f is not scalar or if any
    evaluation produces a non-finite value.
    """
    probe = Tensor(at.data.copy(), requires_grad=True)
    out = f(probe)
    if not isinstance(out, Tensor) or out.size != 1:
        raise ValueError("grad_check expects f to produce a scalar Tensor")
    out.backward()
    analytic = np.zeros(probe.size) if probe.grad is None else probe.grad.reshape(-1).copy()

    base = at.data.reshape(-1).copy()
    worst = 0.0
    for i in range(base.size):
        bumped = base.copy()
        bumped[i] = base[i] + step
        hi = float(f(Tensor(bumped.reshape(at.shape))).data.item())
        bumped[i] = base[i] - step
        lo = float(f(Tensor(bumped.reshape(at.shape))).data.item())
        numeric = (hi - lo) / (2.0 * step)
        if not (np.isfinite(numeric) and np.isfinite(analytic[i])):
            raise ValueError(f"grad_check hit a non-finite value at coordinate {i}")
        rel = abs(analytic[i] - numeric) / max(1.0, abs(analytic[i]))
        if rel > worst:
            worst = rel
    return worst
