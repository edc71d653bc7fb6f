"""Dense float64 tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a read-only ``numpy.ndarray`` of dtype float64.
Operations on tensors that require gradients record a dynamic graph;
:meth:`Tensor.backward` walks it in reverse topological order, fills
``.grad`` on every leaf that requires gradients, and then frees the
intermediate nodes.

Elementwise binary operations accept either two tensors of equal shape or
a tensor and a scalar (0-d tensor or Python number).  Anything else is a
:class:`DimensionError`; use :func:`broadcast_to` when an expansion is
intended.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class NonFiniteError(FloatingPointError):
    """Raised when a computation produced NaN or infinity."""


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


def _freed(_g):
    raise RuntimeError("graph already freed by a previous backward pass")


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    """Immutable float64 array with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], backward: BackwardFn) -> "Tensor":
        out = cls.__new__(cls)
        data = np.asarray(data, dtype=np.float64)
        data.flags.writeable = False
        out.data = data
        out.grad = None
        needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        out.requires_grad = needs
        if needs:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

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
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def assign_(self, values) -> None:
        """Replace the values of a leaf in place (optimizer updates, checkpoint loads)."""
        if self._backward is not None:
            raise RuntimeError("only leaf tensors can be reassigned")
        arr = np.array(values, dtype=np.float64)
        if arr.shape != self.data.shape:
            raise DimensionError(f"cannot assign shape {arr.shape} to tensor of shape {self.data.shape}")
        arr.flags.writeable = False
        self.data = arr

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=6)}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- autodiff ---------------------------------------------------------

    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every tracked leaf."""
        if not self.requires_grad:
            raise RuntimeError("backward() called on a tensor that does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise DimensionError("backward() without an explicit grad needs a scalar output")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=np.float64)
            if grad.shape != self.shape:
                raise DimensionError(f"grad shape {grad.shape} does not match tensor shape {self.shape}")

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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

        grads: dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            pgrads = node._backward(g)
            for p, pg in zip(node._parents, pgrads):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
            node._parents = ()
            node._backward = _freed

    # -- operator sugar ---------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __mul__(self, other):
        return multiply(self, other)

    def __rmul__(self, other):
        return multiply(other, self)

    def __truediv__(self, other):
        return divide(self, other)

    def __rtruediv__(self, other):
        return divide(other, self)

    def __neg__(self):
        return negate(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sqrt(self):
        return sqrt(self)

    def relu(self):
        return relu(self)

    def square(self):
        return square(self)

    def sum(self, axis=None, keepdims=False):
        return reduce("sum", self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce("mean", self, axis, keepdims)

    def max(self, axis=None, keepdims=False):
        return reduce("max", self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def broadcast_to(self, shape):
        return broadcast_to(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def check_finite(t: Tensor | np.ndarray, what: str = "tensor") -> None:
    """Post-step validation: raise :class:`NonFiniteError` if ``t`` has NaN/inf."""
    arr = t.data if isinstance(t, Tensor) else np.asarray(t)
    if not np.all(np.isfinite(arr)):
        bad = np.argwhere(~np.isfinite(arr))[0]
        raise NonFiniteError(f"{what} has a non-finite value at index {tuple(int(i) for i in bad)}")


# -- elementwise ------------------------------------------------------------


def _binary_operands(a, b, tag: str) -> tuple[Tensor, Tensor]:
    a = as_tensor(a)
    b = as_tensor(b)
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise DimensionError(f"{tag}: shapes {a.shape} and {b.shape} are neither equal nor scalar-against-tensor")
    return a, b


def _fit(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # scalar operands collect the whole gradient
    if shape == g.shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "add")
    return Tensor._from_op(a.data + b.data, (a, b), lambda g: (_fit(g, a.shape), _fit(g, b.shape)))


def subtract(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "subtract")
    return Tensor._from_op(a.data - b.data, (a, b), lambda g: (_fit(g, a.shape), _fit(-g, b.shape)))


def multiply(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "multiply")
    return Tensor._from_op(
        a.data * b.data, (a, b), lambda g: (_fit(g * b.data, a.shape), _fit(g * a.data, b.shape))
    )


def divide(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "divide")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data

    def backward(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            ga = g / b.data
            gb = -g * out / b.data
        return _fit(ga, a.shape), _fit(gb, b.shape)

    return Tensor._from_op(out, (a, b), backward)


def minimum(a, b) -> Tensor:
    """Pairwise minimum; on ties the gradient goes to the first operand."""
    a, b = _binary_operands(a, b, "minimum")
    first = a.data <= b.data
    if a.ndim == 0:
        first = np.broadcast_to(first, b.shape)
    elif b.ndim == 0:
        first = np.broadcast_to(first, a.shape)
    out = np.where(first, a.data, b.data)
    return Tensor._from_op(
        out, (a, b), lambda g: (_fit(g * first, a.shape), _fit(g * ~first, b.shape))
    )


def negate(x) -> Tensor:
    x = as_tensor(x)
    return Tensor._from_op(-x.data, (x,), lambda g: (-g,))


def exp(x) -> Tensor:
    x = as_tensor(x)
    with np.errstate(over="ignore"):
        out = np.exp(x.data)
    return Tensor._from_op(out, (x,), lambda g: (g * out,))


def log(x) -> Tensor:
    x = as_tensor(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x.data)

    def backward(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            return (g / x.data,)

    return Tensor._from_op(out, (x,), backward)


def square(x) -> Tensor:
    x = as_tensor(x)
    return Tensor._from_op(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


def relu(x) -> Tensor:
    x = as_tensor(x)
    pos = x.data > 0
    return Tensor._from_op(np.where(pos, x.data, 0.0), (x,), lambda g: (g * pos,))


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    with np.errstate(invalid="ignore"):
        out = np.sqrt(x.data)

    def backward(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            return (0.5 * g / out,)

    return Tensor._from_op(out, (x,), backward)


_UNARY = {"exp": exp, "log": log, "negate": negate, "square": square, "relu": relu, "sqrt": sqrt}
_BINARY = {"add": add, "subtract": subtract, "multiply": multiply, "divide": divide, "minimum": minimum}
ELEMENTWISE_TAGS = tuple(_UNARY) + tuple(_BINARY)


def elementwise(tag: str, *inputs) -> Tensor:
    """Dispatch an elementwise op by name (``"exp"``, ``"minimum"``, ...)."""
    if tag in _UNARY:
        if len(inputs) != 1:
            raise TypeError(f"{tag} takes one input, got {len(inputs)}")
        return _UNARY[tag](inputs[0])
    if tag in _BINARY:
        if len(inputs) != 2:
            raise TypeError(f"{tag} takes two inputs, got {len(inputs)}")
        return _BINARY[tag](*inputs)
    raise ValueError(f"unknown elementwise op {tag!r}; expected one of {ELEMENTWISE_TAGS}")


# -- reductions ---------------------------------------------------------------

REDUCE_TAGS = ("sum", "mean", "max")


def reduce(tag: str, x, axis: int | None = None, keepdims: bool = False) -> Tensor:
    """Reduce along ``axis`` (all axes when ``None``) with ``sum``, ``mean`` or ``max``.

    ``max`` routes the gradient to the first maximizer along the axis.
    """
    x = as_tensor(x)
    if tag not in REDUCE_TAGS:
        raise ValueError(f"unknown reduction {tag!r}; expected one of {REDUCE_TAGS}")
    if axis is None:
        flat = reshape(x, (x.size,))
        out = reduce(tag, flat, 0)
        return reshape(out, (1,) * x.ndim) if keepdims else out
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"reduce axis {axis} out of range for shape {x.shape}")
    axis = axis % x.ndim
    n = x.shape[axis]
    if n == 0:
        raise DimensionError(f"cannot {tag}-reduce an empty axis (shape {x.shape})")

    if tag == "sum":
        out = x.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            g = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(g, x.shape).copy(),)

    elif tag == "mean":
        out = x.data.mean(axis=axis, keepdims=keepdims)

        def backward(g):
            g = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(g / n, x.shape).copy(),)

    else:
        idx = np.expand_dims(np.argmax(x.data, axis=axis), axis)
        out = np.take_along_axis(x.data, idx, axis=axis)
        if not keepdims:
            out = np.squeeze(out, axis=axis)

        def backward(g):
            g = g if keepdims else np.expand_dims(g, axis)
            full = np.zeros(x.shape)
            np.put_along_axis(full, idx, g, axis=axis)
            return (full,)

    return Tensor._from_op(out, (x,), backward)


# -- linear algebra and shape ops ---------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes.

    ``a`` may carry leading batch axes; ``b`` is either a plain matrix shared
    across the batch or has the same leading axes as ``a``.
    """
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs matrices, got shapes {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul batch extents differ: {a.shape} @ {b.shape}")
    out = a.data @ b.data
    shared_b = b.ndim == 2 and a.ndim > 2

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        if shared_b:
            k, n = b.shape
            gb = a.data.reshape(-1, k).T @ g.reshape(-1, n)
        else:
            gb = np.swapaxes(a.data, -1, -2) @ g
        return ga, gb

    return Tensor._from_op(out, (a, b), backward)


def reshape(x, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    out = x.data.reshape(tuple(shape))
    return Tensor._from_op(out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes: Sequence[int] | None = None) -> Tensor:
    """Permute axes; the default swaps the last two."""
    x = as_tensor(x)
    if axes is None:
        if x.ndim < 2:
            raise DimensionError(f"transpose needs at least 2 axes, got shape {x.shape}")
        axes = list(range(x.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return Tensor._from_op(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),))


def broadcast_to(x, shape: Sequence[int]) -> Tensor:
    """Explicit numpy-style expansion; the gradient sums over expanded axes."""
    x = as_tensor(x)
    shape = tuple(shape)
    try:
        out = np.broadcast_to(x.data, shape)
    except ValueError:
        raise DimensionError(f"cannot broadcast shape {x.shape} to {shape}") from None
    lead = len(shape) - x.ndim

    def backward(g):
        g = g.sum(axis=tuple(range(lead))) if lead else g
        axes = tuple(i for i, n in enumerate(x.shape) if n == 1 and g.shape[i] != 1)
        if axes:
            g = g.sum(axis=axes, keepdims=True)
        return (g,)

    return Tensor._from_op(out, (x,), backward)


def getitem(x, index) -> Tensor:
    x = as_tensor(x)
    out = x.data[index]

    def backward(g):
        full = np.zeros(x.shape)
        np.add.at(full, index, g)
        return (full,)

    return Tensor._from_op(np.array(out), (x,), backward)


def take_rows(table, ids) -> Tensor:
    """Gather rows of a 2-D ``table`` by integer ``ids`` of any shape (embedding lookup)."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise DimensionError(f"take_rows needs a 2-D table, got shape {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"row ids must lie in [0, {table.shape[0]})")
    out = table.data[ids]

    def backward(g):
        full = np.zeros(table.shape)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (full,)

    return Tensor._from_op(out, (table,), backward)


def constant(x) -> Tensor:
    return Tensor(x)


def parameters_finite(params: Iterable[Tensor]) -> bool:
    return all(np.all(np.isfinite(p.data)) for p in params)


def make_op(data, parents: Sequence[Tensor], backward: BackwardFn) -> Tensor:
    """Register a fused operation: ``backward(g)`` returns one gradient per parent."""
    return Tensor._from_op(data, parents, backward)
