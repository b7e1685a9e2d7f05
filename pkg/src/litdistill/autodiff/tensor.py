"""Dense tensors and the reverse-mode tape."""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Dict, Iterable, Mapping, Optional, Sequence

import numpy as np

PRECISIONS = {"single": np.float32, "double": np.float64}

_default_dtype = np.float32
_node_counter = itertools.count()
_grad_enabled = True


class DimensionError(ValueError):
    """Raised when operand shapes do not conform to an operation's shape rule."""


class ConfigurationError(ValueError):
    """Raised when an operation or object is configured inconsistently."""


class UsageError(RuntimeError):
    """Raised when the API is called in an unsupported way."""


@contextlib.contextmanager
def precision(name: str):
    """Temporarily switch the default storage precision ("single" or "double").

    Double precision is intended for verification work such as gradient checks.
    """
    global _default_dtype
    if name not in PRECISIONS:
        raise ConfigurationError(f"unknown precision {name!r}")
    saved = _default_dtype
    _default_dtype = PRECISIONS[name]
    try:
        yield
    finally:
        _default_dtype = saved


def default_dtype():
    return _default_dtype


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference, frozen teachers)."""
    global _grad_enabled
    saved = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = saved


class Node:
    """One recorded operation on the tape."""

    __slots__ = ("seq", "kind", "inputs", "attrs", "backward_fn")

    def __init__(self, kind: str, inputs: Sequence["Tensor"], attrs: dict,
                 backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]):
        self.seq = next(_node_counter)
        self.kind = kind
        self.inputs = tuple(inputs)
        self.attrs = attrs
        self.backward_fn = backward_fn


class Tensor:
    """A dense real array that can take part in reverse-mode differentiation."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            dtype = _default_dtype
        arr = np.asarray(data, dtype=dtype)
        # ascontiguousarray would promote 0-d scalars to shape (1,)
        self.data = arr if arr.flags.c_contiguous else np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._node: Optional[Node] = None
        self._detached = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def precision(self) -> str:
        return "double" if self.data.dtype == np.float64 else "single"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return detach(self)

    def backward(self) -> None:
        backward(self)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, precision={self.precision}{flag})"

    # arithmetic sugar routed through the primitive set
    def __add__(self, other):
        from . import ops
        return ops.add(self, _wrap(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, _wrap(other, self))

    def __rsub__(self, other):
        from . import ops
        return ops.sub(_wrap(other, self), self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, _wrap(other, self))

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.mul(self, _wrap(-1.0, self))


def _wrap(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value, dtype=like.data.dtype)


class Parameter(Tensor):
    """A trainable tensor with a stable name, a momentum buffer and an optional prune mask."""

    def __init__(self, data, name: str, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name
        self.momentum_buffer = np.zeros_like(self.data)
        self.prune_mask: Optional[np.ndarray] = None

    def apply_mask(self) -> None:
        if self.prune_mask is not None:
            self.data *= self.prune_mask

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def detach(t: Tensor) -> Tensor:
    """Return a tensor sharing ``t``'s values but severed from the tape."""
    out = Tensor.__new__(Tensor)
    out.data = t.data
    out.requires_grad = False
    out.grad = None
    out._node = None
    out._detached = True
    return out


def record(out_data: np.ndarray, kind: str, inputs: Sequence[Tensor], attrs: dict,
           backward_fn) -> Tensor:
    """Wrap ``out_data`` and attach a tape node if any input needs a gradient."""
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.grad = None
    out._detached = False
    out.requires_grad = _grad_enabled and any(t.requires_grad for t in inputs)
    out._node = Node(kind, inputs, attrs, backward_fn) if out.requires_grad else None
    return out


def _topological_order(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t._node is not None:
            for inp in t._node.inputs:
                if inp.requires_grad and id(inp) not in seen:
                    stack.append((inp, False))
    return order


def backward(loss: Tensor, params: Optional[Iterable[Parameter]] = None) -> Dict[str, np.ndarray]:
    """Propagate d(loss)/d(.) through the tape and return gradients by parameter name.

    Leaf tensors that require a gradient have it accumulated into ``.grad``;
    the returned map holds the gradient of this ``loss`` alone.
    Parameters listed in ``params`` but not reachable from ``loss`` map to zeros.
    The tape below ``loss`` is released afterwards, so a second call raises.
    """
    if loss.data.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise UsageError("loss does not depend on any tensor that requires grad")
    if loss._node is None and loss.grad is not None and not isinstance(loss, Parameter):
        raise UsageError("tape already consumed")

    order = _topological_order(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    result: Dict[str, np.ndarray] = {}
    for t in reversed(order):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        node = t._node
        if node is None:
            t.grad = g.copy() if t.grad is None else t.grad + g
            if isinstance(t, Parameter):
                result[t.name] = g
            continue
        in_grads = node.backward_fn(g)
        for inp, ig in zip(node.inputs, in_grads):
            if ig is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + ig
            else:
                grads[key] = ig
        # release the tape
        node.inputs = ()
        node.backward_fn = _consumed
        t._node = None
        t.grad = g if t is loss else None
    if params is not None:
        for p in params:
            if p.name not in result:
                result[p.name] = np.zeros_like(p.data)
    return result


def _consumed(_g):
    raise UsageError("tape already consumed")


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def named(params: Iterable[Parameter]) -> Mapping[str, Parameter]:
    return {p.name: p for p in params}
