"""Dense tensor with a recorded backward graph.

Every op whose inputs require gradients records a node holding its parents and
a closure computing parent gradients from the output gradient. ``backward``
linearizes the recorded nodes into a :class:`Tape` (topological order), runs
the closures once each, and then marks the tape consumed.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

_grad_enabled = True


class TapeError(RuntimeError):
    """Misuse of the recorded graph (non-scalar loss, second backward, ...)."""


class NonFiniteError(FloatingPointError):
    """NaN or Inf reached a loss or a gradient buffer."""


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class _Node:
    __slots__ = ("parents", "backward_fn", "op")

    def __init__(self, parents: Sequence["Tensor"], backward_fn: Callable, op: str):
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.op = op


_CONSUMED = _Node((), None, "consumed")


class Tensor:
    """N-d array (row-major) with an optional gradient buffer.

    Storage defaults to float32. Passing a float64 array keeps float64, which
    is how the gradient-check tests run a high-precision shadow of the same ops.
    """

    __slots__ = ("data", "grad", "requires_grad", "_node", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            arr = np.asarray(data)
            dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else DEFAULT_DTYPE
        self.data = np.asarray(data, dtype=dtype, order="C")
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._node: _Node | None = None
        self.name = name

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag}, requires_grad={self.requires_grad})"

    # -- operator sugar (implementations live in functional) --------------
    def __add__(self, other):
        from . import functional as F
        return F.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import functional as F
        return F.sub(self, other)

    def __rsub__(self, other):
        from . import functional as F
        return F.sub(other, self)

    def __mul__(self, other):
        from . import functional as F
        return F.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import functional as F
        return F.div(self, other)

    def __neg__(self):
        from . import functional as F
        return F.mul(self, -1.0)

    def __matmul__(self, other):
        from . import functional as F
        return F.matmul(self, other)

    def __getitem__(self, index):
        from . import functional as F
        return F.getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        from . import functional as F
        return F.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import functional as F
        return F.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        from . import functional as F
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return F.reshape(self, shape)

    def backward(self) -> None:
        backward(self)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else DEFAULT_DTYPE
    return Tensor(np.asarray(x, dtype=dtype), dtype=dtype)


def make_result(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    """Wrap an op's output, recording a node when any parent needs gradients."""
    out = Tensor(data, dtype=data.dtype)
    if _grad_enabled and any(p.requires_grad for p in parents):
        for p in parents:
            if p._node is _CONSUMED:
                raise TapeError(f"{op}: input belongs to an already consumed tape")
        out.requires_grad = True
        out._node = _Node(parents, backward_fn, op)
    return out


class Tape:
    """Topologically ordered list of the nodes reachable from one loss."""

    def __init__(self, loss: Tensor):
        self.loss = loss
        self.order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(loss, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                self.order.append(t)
                continue
            if id(t) in seen:
                continue
            seen.add(id(t))
            stack.append((t, True))
            node = t._node
            if node is not None and node is not _CONSUMED:
                for p in node.parents:
                    if p.requires_grad and id(p) not in seen:
                        stack.append((p, False))
        # order is post-order: parents before children
        self.consumed = False

    def __len__(self) -> int:
        return len(self.order)

    def run(self) -> None:
        if self.consumed:
            raise TapeError("tape already consumed")
        loss = self.loss
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for t in reversed(self.order):
            g = grads.pop(id(t), None)
            node = t._node
            if node is None:
                if g is not None and t.requires_grad:
                    if not np.all(np.isfinite(g)):
                        raise NonFiniteError(f"non-finite gradient for {t!r}")
                    t.grad = g.copy() if t.grad is None else t.grad + g
                continue
            if g is None:
                continue
            parent_grads = node.backward_fn(g)
            for p, pg in zip(node.parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        for t in self.order:
            if t._node is not None:
                t._node = _CONSUMED
        self.consumed = True


def backward(loss: Tensor) -> Tape:
    """Populate ``.grad`` of every leaf reachable from a scalar ``loss``."""
    if loss.size != 1:
        raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._node is _CONSUMED:
        raise TapeError("backward called twice on the same tape")
    if not loss.requires_grad:
        raise TapeError("loss is not on a tape (no input requires grad)")
    if not np.all(np.isfinite(loss.data)):
        raise NonFiniteError(f"loss is not finite: {loss.data.reshape(-1)[0]}")
    tape = Tape(loss)
    tape.run()
    return tape
