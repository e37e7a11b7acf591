"""
Dense tensor type with a reverse-mode autodiff tape.

Every operation that involves a tensor requiring gradients records a TapeNode
holding its parents and a closure that maps the output gradient to parent
gradients. ``Tensor.backward`` walks the tape once in reverse topological
order and accumulates gradients into leaf tensors. Grad mode and the default
dtype are per thread.
"""
from contextlib import contextmanager
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, Union
import logging
import threading

import numpy as np

from panther_toy.errors import DimensionError, TapeError


logger = logging.getLogger(__name__)

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


class _TapeState(threading.local):
    """Grad mode and default dtype; every thread starts recording in float64."""

    def __init__(self):
        self.default_dtype = np.dtype(np.float64)
        self.grad_enabled = True


_state = _TapeState()


def set_default_dtype(dtype) -> None:
    """Set the floating dtype used for new tensors (float64 or float32) in this thread."""
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float64), np.dtype(np.float32)):
        raise ValueError(f"Unsupported dtype: {dtype}")
    _state.default_dtype = dtype


def get_default_dtype() -> np.dtype:
    """Return the floating dtype used for new tensors in this thread."""
    return _state.default_dtype


def is_grad_enabled() -> bool:
    """Return True when this thread records operations on the tape."""
    return _state.grad_enabled


@contextmanager
def no_grad() -> Iterator[None]:
    """Context manager that disables tape recording in the current thread."""
    previous = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


class TapeNode:
    """
    Record of one differentiable operation.

    Attributes:
        op (str): Operation tag, for debugging.
        parents (Tuple[Tensor, ...]): Input tensors of the operation.
        backward_fn: Maps the output gradient to one gradient per parent.
        consumed (bool): Set once backward has run through this node.
    """

    __slots__ = ("op", "parents", "backward_fn", "consumed")

    def __init__(self, op: str, parents: Tuple["Tensor", ...], backward_fn: BackwardFn):
        self.op = op
        self.parents = parents
        self.backward_fn: Optional[BackwardFn] = backward_fn
        self.consumed = False

    def __repr__(self) -> str:
        return f"TapeNode({self.op}, parents={len(self.parents)})"


class Tensor:
    """
    Dense row-major array with an optional gradient record.

    Attributes:
        data (np.ndarray): The values.
        requires_grad (bool): Whether gradients flow to this tensor.
        grad (Optional[np.ndarray]): Accumulated gradient for leaf tensors.
        node (Optional[TapeNode]): Producing operation, None for leaves.
        name (Optional[str]): Optional label, set for parameters.
    """

    def __init__(self, data: ArrayLike, requires_grad: bool = False,
                 dtype=None, name: Optional[str] = None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            if isinstance(data, np.ndarray) and np.issubdtype(data.dtype, np.floating):
                dtype = data.dtype
            else:
                dtype = _state.default_dtype
        self.data = np.array(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.node: Optional[TapeNode] = None
        self.name = name

    # ------------------------------------------------------------------
    # Properties

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def __len__(self) -> int:
        return self.data.shape[0]

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad}{label})"

    # ------------------------------------------------------------------
    # Conversions

    def numpy(self) -> np.ndarray:
        """Return the underlying array (not a copy)."""
        return self.data

    def item(self) -> float:
        """Return the single value of a one-element tensor."""
        if self.data.size != 1:
            raise DimensionError("item() requires a single-element tensor", self.shape)
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        """Return a tensor sharing values but with no tape history."""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        """Clear the accumulated gradient."""
        self.grad = None

    def grad_or_zeros(self) -> np.ndarray:
        """Return the accumulated gradient, or zeros if none was accumulated."""
        return self.grad if self.grad is not None else np.zeros_like(self.data)

    # ------------------------------------------------------------------
    # Backward

    def backward(self, grad: Optional[np.ndarray] = None):
        """
        Propagate gradients from this tensor to every leaf that requires them.

        Args:
            grad: Seed gradient; may be omitted for single-element tensors.

        Raises:
            TapeError: If the graph was already consumed by an earlier backward,
                or if no seed is given for a multi-element tensor.
        """
        if not self.requires_grad:
            raise TapeError("backward() called on a tensor that does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise TapeError(f"backward() needs a seed gradient for shape {self.shape}")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=self.dtype)

        order = _topological_order(self)
        for tensor in order:
            if tensor.node is not None and tensor.node.consumed:
                raise TapeError("backward() called twice on the same graph; run forward again")

        grads = {id(self): grad}
        for tensor in reversed(order):
            g = grads.pop(id(tensor), None)
            if g is None:
                continue
            node = tensor.node
            if node is None:
                if tensor.requires_grad:
                    tensor.grad = g.copy() if tensor.grad is None else tensor.grad + g
                continue
            assert node.backward_fn is not None
            parent_grads = node.backward_fn(g)
            for parent, parent_grad in zip(node.parents, parent_grads):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + parent_grad
                else:
                    grads[key] = parent_grad

        for tensor in order:
            if tensor.node is not None:
                tensor.node.consumed = True
                tensor.node.backward_fn = None

    # ------------------------------------------------------------------
    # Operators

    def __add__(self, other: ArrayLike) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return mul(other, self)

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        return div(self, other)

    def __neg__(self) -> "Tensor":
        return mul(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __getitem__(self, index) -> "Tensor":
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        return transpose(self, axes if axes else None)


def _topological_order(root: Tensor) -> List[Tensor]:
    """Iterative post-order DFS so deep graphs do not hit the recursion limit."""
    order: List[Tensor] = []
    visited = set()
    stack: List[Tuple[Tensor, bool]] = [(root, False)]
    while stack:
        tensor, expanded = stack.pop()
        if expanded:
            order.append(tensor)
            continue
        if id(tensor) in visited:
            continue
        visited.add(id(tensor))
        stack.append((tensor, True))
        if tensor.node is not None:
            for parent in tensor.node.parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
    return order


def as_tensor(value: ArrayLike, like: Optional[Tensor] = None) -> Tensor:
    """Wrap a constant as a tensor, matching the dtype of ``like`` if given."""
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(value, dtype=dtype)


def make_result(data: np.ndarray, parents: Sequence[Tensor], op: str,
                backward_fn: BackwardFn) -> Tensor:
    """
    Build an operation output and record it on the tape when needed.

    Args:
        data: Output values.
        parents: Input tensors.
        op: Operation tag.
        backward_fn: Gradient rule, returning one entry per parent.

    Returns:
        The output tensor.
    """
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = False
    out.grad = None
    out.node = None
    out.name = None
    if _state.grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.node = TapeNode(op, tuple(parents), backward_fn)
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ----------------------------------------------------------------------
# Elementwise arithmetic


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Elementwise sum with numpy broadcasting."""
    a_t = as_tensor(a, b if isinstance(b, Tensor) else None)
    b_t = as_tensor(b, a_t)
    data = a_t.data + b_t.data

    def backward(g):
        return _unbroadcast(g, a_t.shape), _unbroadcast(g, b_t.shape)

    return make_result(data, (a_t, b_t), "add", backward)


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Elementwise difference with numpy broadcasting."""
    a_t = as_tensor(a, b if isinstance(b, Tensor) else None)
    b_t = as_tensor(b, a_t)
    data = a_t.data - b_t.data

    def backward(g):
        return _unbroadcast(g, a_t.shape), _unbroadcast(-g, b_t.shape)

    return make_result(data, (a_t, b_t), "sub", backward)


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    a_t = as_tensor(a, b if isinstance(b, Tensor) else None)
    b_t = as_tensor(b, a_t)
    data = a_t.data * b_t.data

    def backward(g):
        return _unbroadcast(g * b_t.data, a_t.shape), _unbroadcast(g * a_t.data, b_t.shape)

    return make_result(data, (a_t, b_t), "mul", backward)


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Elementwise quotient with numpy broadcasting."""
    a_t = as_tensor(a, b if isinstance(b, Tensor) else None)
    b_t = as_tensor(b, a_t)
    data = a_t.data / b_t.data

    def backward(g):
        grad_a = _unbroadcast(g / b_t.data, a_t.shape)
        grad_b = _unbroadcast(-g * a_t.data / (b_t.data * b_t.data), b_t.shape)
        return grad_a, grad_b

    return make_result(data, (a_t, b_t), "div", backward)


def exp(x: Tensor) -> Tensor:
    """Elementwise exponential."""
    data = np.exp(x.data)
    return make_result(data, (x,), "exp", lambda g: (g * data,))


def log(x: Tensor) -> Tensor:
    """Elementwise natural logarithm."""
    return make_result(np.log(x.data), (x,), "log", lambda g: (g / x.data,))


def tanh(x: Tensor) -> Tensor:
    """Elementwise hyperbolic tangent."""
    data = np.tanh(x.data)
    return make_result(data, (x,), "tanh", lambda g: (g * (1.0 - data * data),))


def masked_fill(x: Tensor, mask: np.ndarray, value: float) -> Tensor:
    """
    Replace entries where ``mask`` is True with a constant.

    The mask broadcasts against ``x``; filled entries receive no gradient.
    """
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    data = np.where(mask, x.dtype.type(value), x.data)
    return make_result(data, (x,), "masked_fill", lambda g: (np.where(mask, 0.0, g),))


# ----------------------------------------------------------------------
# Linear algebra and shape manipulation


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """
    Matrix product of 2-D tensors, or a batched product of 3-D tensors with
    equal leading dimension.

    Raises:
        DimensionError: If the inner dimensions or batch dimensions differ.
    """
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
        raise DimensionError("matmul shapes do not align", a.shape, b.shape)
    data = np.matmul(a.data, b.data)

    def backward(g):
        grad_a = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        grad_b = np.matmul(np.swapaxes(a.data, -1, -2), g) if b.requires_grad else None
        return grad_a, grad_b

    return make_result(data, (a, b), "matmul", backward)


def transpose(x: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    """Permute axes (reverse them when ``axes`` is None)."""
    axes_t = tuple(axes) if axes is not None else tuple(reversed(range(x.ndim)))
    inverse = tuple(np.argsort(axes_t))
    data = np.transpose(x.data, axes_t)
    return make_result(data, (x,), "transpose", lambda g: (np.transpose(g, inverse),))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    """Reshape without changing row-major order."""
    data = x.data.reshape(tuple(shape))
    original = x.shape
    return make_result(data, (x,), "reshape", lambda g: (g.reshape(original),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """
    Concatenate tensors along ``axis``.

    Raises:
        DimensionError: If the non-concatenated dimensions differ.
    """
    tensors = [t for t in tensors if t is not None]
    if not tensors:
        raise DimensionError("concat needs at least one tensor")
    reference = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(reference) or any(
                s != r for i, (s, r) in enumerate(zip(t.shape, reference)) if i != axis % len(reference)):
            raise DimensionError("concat shapes differ", reference, t.shape)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return make_result(data, tuple(tensors), "concat", backward)


def getitem(x: Tensor, index) -> Tensor:
    """Basic or advanced indexing; gradient is scattered back with np.add.at."""
    data = x.data[index]

    def backward(g):
        grad = np.zeros_like(x.data)
        np.add.at(grad, index, g)
        return (grad,)

    return make_result(np.array(data, copy=True), (x,), "getitem", backward)


def take_rows(x: Tensor, rows: Sequence[int]) -> Tensor:
    """Gather rows (axis 0) in the given order; values are copied unchanged."""
    rows = np.asarray(rows, dtype=np.int64)
    data = x.data[rows]

    def backward(g):
        grad = np.zeros_like(x.data)
        np.add.at(grad, rows, g)
        return (grad,)

    return make_result(data, (x,), "take_rows", backward)


def tensor_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Sum over ``axis`` (all axes when None)."""
    data = np.sum(x.data, axis=axis, keepdims=keepdims)
    shape = x.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return make_result(np.asarray(data), (x,), "sum", backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Arithmetic mean over ``axis`` (all axes when None)."""
    count = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(tensor_sum(x, axis=axis, keepdims=keepdims), 1.0 / count)
