"""Dense n-d arrays with reverse-mode automatic differentiation.

Every differentiable operation produces a ``Tensor`` carrying a ``Node``
stamped with a global sequence number.  ``backward`` gathers the nodes
reachable from a scalar loss and replays their backward rules in
descending sequence order, i.e. in exact reverse execution order.
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

_default_dtype = np.dtype(np.float32)
_grad_enabled = True
_seq = itertools.count()


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def get_default_dtype() -> np.dtype:
    return _default_dtype


def set_default_dtype(dtype) -> None:
    global _default_dtype
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    _default_dtype = dtype


@contextlib.contextmanager
def default_dtype(dtype):
    """Temporarily switch the dtype used for newly created tensors."""
    prev = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(prev)


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Node:
    """One taped operation: its inputs, its output and its backward rule."""

    __slots__ = ("seq", "op", "inputs", "backward_fn", "output")

    def __init__(self, op: str, inputs: tuple, backward_fn: Callable):
        self.seq = next(_seq)
        self.op = op
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.output = None

    def __repr__(self):
        return f"Node({self.op}, seq={self.seq})"


class Tensor:
    """An n-dimensional float array that can record operations for autodiff."""

    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            floating = isinstance(data, np.ndarray) and data.dtype.kind == "f"
            dtype = data.dtype if floating else _default_dtype
        self.data = np.array(data, dtype=dtype, copy=True) if not isinstance(data, np.ndarray) \
            else data.astype(dtype, copy=False)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._node: Node | None = None

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
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

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.item())

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def __len__(self):
        return self.data.shape[0]

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # -- autodiff ---------------------------------------------------------
    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into the ``grad`` of every reachable leaf."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError(f"backward() needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        nodes = tape_of(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.dtype)}
        for node in nodes:
            out = node.output
            g = grads.pop(id(out), None)
            if g is None:
                continue
            in_grads = node.backward_fn(g)
            for t, gi in zip(node.inputs, in_grads):
                if gi is None or not isinstance(t, Tensor) or not t.requires_grad:
                    continue
                if t._node is None:
                    gi = _unbroadcast(gi, t.shape)
                    if t.grad is None:
                        t.grad = np.zeros_like(t.data)
                    t.grad += gi
                else:
                    key = id(t)
                    gi = _unbroadcast(gi, t.shape)
                    grads[key] = grads[key] + gi if key in grads else gi
        # self may itself be a leaf
        if self._node is None and self.requires_grad:
            if self.grad is None:
                self.grad = np.zeros_like(self.data)
            self.grad += np.asarray(grad, dtype=self.dtype)

    # -- operators --------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def relu(self):
        return relu(self)


class Parameter(Tensor):
    """A learnable tensor whose gradient buffer always matches its shape."""

    def __init__(self, data, name: str = "", dtype=None):
        data = data.data if isinstance(data, Tensor) else data
        super().__init__(np.array(data, dtype=dtype or _default_dtype), requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def astype(self, dtype) -> None:
        self.data = self.data.astype(dtype)
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape}, dtype={self.dtype})"


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if dtype is None:
        dtype = _default_dtype
    return Tensor(np.asarray(x, dtype=dtype), dtype=dtype)


def tape_of(root: Tensor) -> list[Node]:
    """Nodes reachable from ``root``, ordered for replay (latest first)."""
    seen: set[int] = set()
    nodes: list[Node] = []
    stack = [root]
    while stack:
        t = stack.pop()
        node = t._node
        if node is None or id(node) in seen:
            continue
        seen.add(id(node))
        nodes.append(node)
        stack.extend(i for i in node.inputs if isinstance(i, Tensor))
    nodes.sort(key=lambda n: n.seq, reverse=True)
    return nodes


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


def make_result(data: np.ndarray, op: str, inputs: Sequence, backward_fn: Callable) -> Tensor:
    """Wrap ``data`` as the output of a taped op (or untaped if no input needs grad)."""
    out = Tensor(data, dtype=data.dtype)
    if _grad_enabled and any(isinstance(t, Tensor) and t.requires_grad for t in inputs):
        out.requires_grad = True
        node = Node(op, tuple(inputs), backward_fn)
        node.output = out
        out._node = node
    return out


def _operand(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else _default_dtype
    return Tensor(np.asarray(x, dtype=dtype), dtype=dtype)


def _pair(a, b):
    if isinstance(a, Tensor):
        return a, _operand(b, a)
    b = _operand(b)
    return _operand(a, b), b


# -- elementwise ----------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    return make_result(a.data + b.data, "add", (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    return make_result(a.data - b.data, "sub", (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    return make_result(a.data * b.data, "mul", (a, b), lambda g: (g * b.data, g * a.data))


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data / b.data
    return make_result(out, "div", (a, b), lambda g: (g / b.data, -g * out / b.data))


def power(a: Tensor, exponent: float) -> Tensor:
    if isinstance(exponent, Tensor):
        raise TypeError("only scalar exponents are supported")
    p = float(exponent)
    out = a.data ** p
    return make_result(out, "power", (a,), lambda g: (g * p * a.data ** (p - 1.0),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return make_result(out, "exp", (a,), lambda g: (g * out,))


LOG_FLOOR = 1e-12


def log(a: Tensor) -> Tensor:
    """Natural log with inputs floored at ``LOG_FLOOR``."""
    safe = np.maximum(a.data, LOG_FLOOR)
    return make_result(np.log(safe), "log", (a,),
                       lambda g: (np.where(a.data > LOG_FLOOR, g / safe, 0.0),))


def sqrt(a: Tensor) -> Tensor:
    return power(a, 0.5)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return make_result(a.data * mask, "relu", (a,), lambda g: (g * mask,))


def clamp(a: Tensor, lo=None, hi=None) -> Tensor:
    out = np.clip(a.data, lo, hi)
    mask = np.ones(a.shape, dtype=bool)
    if lo is not None:
        mask &= a.data >= lo
    if hi is not None:
        mask &= a.data <= hi
    return make_result(out, "clamp", (a,), lambda g: (g * mask,))


def maximum(a: Tensor, floor: float) -> Tensor:
    """Elementwise max against a scalar floor."""
    mask = a.data > floor
    return make_result(np.where(mask, a.data, floor).astype(a.dtype), "maximum", (a,),
                       lambda g: (g * mask,))


# -- reductions and shape ops -----------------------------------------------
def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape),)

    return make_result(np.asarray(out), "sum", (a,), backward)


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return tsum(a, axes, keepdims) * (1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)
    return make_result(out, "reshape", (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return make_result(a.data.transpose(axes), "transpose", (a,), lambda g: (g.transpose(inv),))


def getitem(a: Tensor, idx) -> Tensor:
    out = a.data[idx]

    basic = all(isinstance(i, (slice, int, type(None), type(Ellipsis)))
                for i in (idx if isinstance(idx, tuple) else (idx,)))

    def backward(g):
        full = np.zeros_like(a.data)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return make_result(np.array(out), "getitem", (a,), backward)


def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2) if b.ndim > 1 else np.multiply.outer(g, b.data)
        gb = np.swapaxes(a.data, -1, -2) @ g if a.ndim > 1 else np.multiply.outer(a.data, g)
        return ga, gb

    return make_result(a.data @ b.data, "matmul", (a, b), backward)


def concat(inputs: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Join tensors along ``axis``; output extent is the sum of input extents."""
    inputs = [_operand(t) for t in inputs]
    if not inputs:
        raise ValueError("concat needs at least one input")
    ref = inputs[0].shape
    ax = axis % len(ref)
    for t in inputs[1:]:
        if t.ndim != len(ref) or any(s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != ax):
            raise ShapeError(f"cannot concat shapes {ref} and {t.shape} on axis {axis}")
    sizes = [t.shape[ax] for t in inputs]
    bounds = np.cumsum([0] + sizes)
    out = np.concatenate([t.data for t in inputs], axis=ax)

    def backward(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax)
                     for i in range(len(inputs)))

    return make_result(out, "concat", inputs, backward)


def stack(inputs: Sequence[Tensor], axis: int = 0) -> Tensor:
    return concat([t.reshape(t.shape[:axis] + (1,) + t.shape[axis:]) for t in inputs], axis)


def zeros(shape, dtype=None) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype or _default_dtype))


def ones(shape, dtype=None) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype or _default_dtype))


def parameters_of(tensors: Iterable[Tensor]) -> list[Parameter]:
    return [t for t in tensors if isinstance(t, Parameter)]


def amax(a: Tensor, axis=None, keepdims=False) -> Tensor:
    """Maximum over ``axis``; the gradient is shared equally among tied maxima."""
    axes = _norm_axis(axis, a.ndim)
    m = a.data.max(axis=axes, keepdims=True)
    hit = a.data == m
    share = hit / hit.sum(axis=axes, keepdims=True)
    out = m if keepdims else m.reshape([s for i, s in enumerate(a.shape) if i not in axes])

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (g * share,)

    return make_result(np.asarray(out), "amax", (a,), backward)


def amin(a: Tensor, axis=None, keepdims=False) -> Tensor:
    return -amax(-a, axis, keepdims)
