"""N-dimensional tensor type with a reverse-mode gradient tape.

Values are row-major contiguous float32 arrays (float64 is supported for
gradient-oracle checks). Recording is ambient: while gradients are enabled,
any op whose inputs require grad appends a node to the current thread's
tape, and ``backward(loss)`` replays that tape in exact reverse order.
One training step owns one tape; ``backward`` clears it.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np

from .errors import ShapeError

FLOAT_DTYPES = (np.float32, np.float64)


class Tensor:
    """Contiguous n-d float array, optionally participating in the tape."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in FLOAT_DTYPES or not isinstance(data, (np.ndarray, np.generic)):
            # float32 by default; explicit float64 arrays keep their precision
            arr = arr.astype(np.float32)
        # ascontiguousarray would promote 0-d scalars to 1-d
        self.data = arr if arr.ndim == 0 else np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad: Tensor | None = None

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
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise ShapeError(f"item() requires a scalar tensor, got shape {self.shape}")

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    # arithmetic sugar; the functional forms live in gsvit.ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, axes=None):
        from . import ops
        return ops.transpose(self, axes)

    @property
    def T(self):
        return self.transpose()

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)

    def __repr__(self):
        grad_flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}{grad_flag})"


class TapeNode:
    """One recorded op: which tensors went in, what came out, how to push grads back."""

    __slots__ = ("inputs", "output", "backward_fn")

    def __init__(self, inputs, output, backward_fn):
        self.inputs = inputs      # tuple of Tensor-or-None, aligned with backward_fn outputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Ordered op record; inputs of every node precede the node itself."""

    __slots__ = ("nodes",)

    def __init__(self):
        self.nodes: list[TapeNode] = []

    def __len__(self):
        return len(self.nodes)

    def clear(self):
        self.nodes.clear()


class _State(threading.local):
    def __init__(self):
        self.tape: Tape | None = None
        self.grad_enabled = True


_state = _State()


def grad_enabled() -> bool:
    return _state.grad_enabled


@contextmanager
def no_grad():
    """Disable tape recording on this thread (inference / benchmarking)."""
    prev = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


def active_tape() -> Tape | None:
    return _state.tape


def clear_tape() -> None:
    if _state.tape is not None:
        _state.tape.clear()


def record(output: Tensor, inputs, backward_fn) -> None:
    """Append a node for `output` if recording is on and any input needs grad."""
    if not _state.grad_enabled:
        return
    if not any(t is not None and t.requires_grad for t in inputs):
        return
    if _state.tape is None:
        _state.tape = Tape()
    _state.tape.nodes.append(TapeNode(tuple(inputs), output, backward_fn))


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires-grad leaf reachable from ``loss``.

    The tape is consumed in exact reverse recording order and cleared
    afterwards. Gradients accumulate across calls (callers zero them).
    """
    if loss.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    tape = _state.tape
    if tape is None or not tape.nodes:
        raise RuntimeError("backward called with an empty tape (no recorded operations)")

    produced = {id(node.output) for node in tape.nodes}
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    holders: dict[int, Tensor] = {id(loss): loss}

    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        holders.pop(id(node.output), None)
        if g is None:
            continue
        input_grads = node.backward_fn(g)
        for inp, ig in zip(node.inputs, input_grads):
            if inp is None or ig is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + ig
            else:
                grads[key] = ig
                holders[key] = inp

    for key, g in grads.items():
        leaf = holders[key]
        if id(leaf) in produced:
            continue
        if leaf.grad is None:
            leaf.grad = Tensor(np.array(g, copy=True))
        else:
            leaf.grad.data += g

    tape.clear()
