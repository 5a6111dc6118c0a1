"""Dense real arrays with analytic backward passes.

The unit of differentiable computation is :class:`DiffNode`: a value array
paired with a gradient array of identical shape.  The operations in this
module (`elementwise`, `matmul`, `reduce`) each record a one-step backward
rule on the node they return; calling :meth:`DiffNode.backward` replays the
recorded rules in reverse topological order, accumulating exact analytic
partials into the inputs' ``grad`` arrays.

Layers elsewhere in the package keep their parameters as DiffNodes but
implement their own vectorised forward/backward pairs; this module is the
common substrate plus the small-op API used for composition and testing.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .errors import ShapeError

MAX_RANK = 4

DTYPES = {"f32": np.float32, "f64": np.float64}


def resolve_dtype(precision) -> np.dtype:
    """Map a precision name ('f32'/'f64') or dtype-like to a numpy dtype."""
    if isinstance(precision, str):
        if precision not in DTYPES:
            raise ValueError(f"unknown precision {precision!r}; expected one of {sorted(DTYPES)}")
        return np.dtype(DTYPES[precision])
    return np.dtype(precision)


def validate_shape(dims: Sequence[int]) -> tuple[int, ...]:
    """Check that ``dims`` is a rank 1-4 shape with every extent >= 1."""
    dims = tuple(int(d) for d in dims)
    if not 1 <= len(dims) <= MAX_RANK:
        raise ShapeError(f"rank {len(dims)} outside supported range 1..{MAX_RANK}")
    if any(d < 1 for d in dims):
        raise ShapeError(f"shape {dims} has an extent < 1")
    return dims


# Numerically stable activations, shared by layers and attention blocks.
# The *_grad helpers take the forward OUTPUT, which is cheaper to cache
# than the input for all three.

def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_grad(out: np.ndarray) -> np.ndarray:
    return out * (1.0 - out)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_grad(out: np.ndarray) -> np.ndarray:
    return (out > 0).astype(out.dtype)


def tanh(x: np.ndarray) -> np.ndarray:
    return np.tanh(x)


def tanh_grad(out: np.ndarray) -> np.ndarray:
    return 1.0 - out * out


#: name -> (forward, grad-from-output); the gating nonlinearities used by
#: the excitation blocks and the elementwise op below.
ACTIVATIONS = {
    "sigmoid": (sigmoid, sigmoid_grad),
    "relu": (relu, relu_grad),
    "tanh": (tanh, tanh_grad),
}


class DiffNode:
    """A value array paired with a same-shaped gradient array.

    Leaf nodes (parameters, inputs) are created directly; interior nodes are
    created by the ops below and carry a backward rule.  ``grad`` accumulates
    across backward calls until :func:`zero_grad` resets it.
    """

    __slots__ = ("value", "grad", "requires_grad", "_inputs", "_backprop")

    def __init__(self, value, requires_grad: bool = True):
        value = np.asarray(value)
        if value.dtype.kind != "f":
            value = value.astype(np.float64)
        validate_shape(value.shape)
        self.value = value
        self.grad = np.zeros_like(value)
        self.requires_grad = requires_grad
        self._inputs: tuple[DiffNode, ...] = ()
        self._backprop = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad[...] = 0

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Propagate ``grad`` (default: all-ones) back to every ancestor."""
        if grad is None:
            grad = np.ones_like(self.value)
        grad = np.asarray(grad, dtype=self.value.dtype)
        if grad.shape != self.value.shape:
            raise ShapeError(f"seed gradient shape {grad.shape} != value shape {self.value.shape}")

        order: list[DiffNode] = []
        seen: set[int] = set()

        def visit(node: DiffNode) -> None:
            if id(node) in seen:
                return
            seen.add(id(node))
            for parent in node._inputs:
                visit(parent)
            order.append(node)

        visit(self)
        self.grad = self.grad + grad
        for node in reversed(order):
            if node._backprop is not None:
                node._backprop(node.grad)

    def __repr__(self) -> str:
        return f"DiffNode(shape={self.shape}, requires_grad={self.requires_grad})"


def _sum_to_shape(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a full-shape gradient down to a broadcast input's shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, (have, want) in enumerate(zip(grad.shape, shape)):
        if want == 1 and have != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _accumulate(node: DiffNode, grad: np.ndarray) -> None:
    if node.requires_grad:
        node.grad = node.grad + _sum_to_shape(grad, node.shape)


def _make_node(value: np.ndarray, inputs: tuple[DiffNode, ...], backprop) -> DiffNode:
    out = DiffNode(value, requires_grad=any(n.requires_grad for n in inputs))
    out._inputs = inputs
    out._backprop = backprop
    return out


_BINARY_OPS = ("add", "sub", "mul", "max")
_UNARY_OPS = ("sigmoid", "relu", "tanh")


def _check_broadcast(a: tuple[int, ...], b: tuple[int, ...]) -> None:
    try:
        np.broadcast_shapes(a, b)
    except ValueError:
        raise ShapeError(f"shapes {a} and {b} do not broadcast") from None


def elementwise(op: str, a: DiffNode, b: DiffNode | None = None) -> DiffNode:
    """Pointwise op with exact analytic backward.

    Binary ops (add/sub/mul/max) broadcast along singleton axes; the
    gradient of a broadcast input is summed over the broadcast axes.
    Ties in ``max`` send the whole gradient to ``a``.
    """
    if op in _BINARY_OPS:
        if b is None:
            raise ValueError(f"elementwise {op!r} needs two operands")
        _check_broadcast(a.shape, b.shape)
        av, bv = a.value, b.value
        if op == "add":
            def backprop(g):
                _accumulate(a, g)
                _accumulate(b, g)
            return _make_node(av + bv, (a, b), backprop)
        if op == "sub":
            def backprop(g):
                _accumulate(a, g)
                _accumulate(b, -g)
            return _make_node(av - bv, (a, b), backprop)
        if op == "mul":
            def backprop(g):
                _accumulate(a, g * bv)
                _accumulate(b, g * av)
            return _make_node(av * bv, (a, b), backprop)
        # max: a wins ties
        a_wins = av >= bv
        def backprop(g):
            _accumulate(a, np.where(a_wins, g, 0))
            _accumulate(b, np.where(a_wins, 0, g))
        return _make_node(np.maximum(av, bv), (a, b), backprop)

    if op in _UNARY_OPS:
        if b is not None:
            raise ValueError(f"elementwise {op!r} takes a single operand")
        fwd, grad_from_out = ACTIVATIONS[op]
        out_value = fwd(a.value)
        def backprop(g):
            _accumulate(a, g * grad_from_out(out_value))
        return _make_node(out_value, (a,), backprop)

    raise ValueError(f"unknown elementwise op {op!r}")


def matmul(a: DiffNode, b: DiffNode) -> DiffNode:
    """Matrix product of two rank-2 nodes."""
    if len(a.shape) != 2 or len(b.shape) != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions disagree: {a.shape} x {b.shape}")
    av, bv = a.value, b.value

    def backprop(g):
        _accumulate(a, g @ bv.T)
        _accumulate(b, av.T @ g)

    return _make_node(av @ bv, (a, b), backprop)


def reduce(op: str, a: DiffNode, axes: Iterable[int]) -> DiffNode:
    """Mean or max reduction over ``axes``; reduced extents become 1.

    Mean distributes the upstream gradient uniformly.  Max routes it to
    the first maximal element in row-major order within each window.
    """
    axes = tuple(sorted({int(ax) for ax in axes}))
    if not axes:
        raise ValueError("reduce needs a non-empty axis set")
    rank = len(a.shape)
    if any(ax < 0 or ax >= rank for ax in axes):
        raise ValueError(f"axes {axes} invalid for shape {a.shape}")

    if op == "mean":
        count = int(np.prod([a.shape[ax] for ax in axes]))
        value = a.value.mean(axis=axes, keepdims=True)

        def backprop(g):
            _accumulate(a, np.broadcast_to(g / count, a.shape))

        return _make_node(value, (a,), backprop)

    if op == "max":
        value = a.value.max(axis=axes, keepdims=True)
        kept = tuple(ax for ax in range(rank) if ax not in axes)
        moved = np.moveaxis(a.value, axes, range(len(kept), rank))
        kept_shape = tuple(a.shape[ax] for ax in kept)
        flat = moved.reshape(kept_shape + (-1,))
        winners = flat.argmax(axis=-1)  # first occurrence, row-major over reduced axes

        def backprop(g):
            g_kept = g.reshape(kept_shape + (1,))
            scatter = np.zeros_like(flat)
            np.put_along_axis(scatter, winners[..., None], g_kept, axis=-1)
            scatter = scatter.reshape(kept_shape + tuple(a.shape[ax] for ax in axes))
            _accumulate(a, np.moveaxis(scatter, range(len(kept), rank), axes))

        return _make_node(value, (a,), backprop)

    raise ValueError(f"unknown reduce op {op!r}")


def zero_grad(params: Iterable[DiffNode]) -> None:
    """Reset the gradient of every node in ``params`` to zero."""
    for p in params:
        p.zero_grad()
