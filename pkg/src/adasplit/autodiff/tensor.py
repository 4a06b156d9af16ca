"""Tensor node and the reverse-mode tape.

Every differentiable primitive (see :mod:`adasplit.autodiff.ops`) produces a
:class:`Tensor` that remembers its parents and a closure mapping the output
gradient to one gradient per parent. Nodes carry a global creation counter, so
sorting the reachable nodes by that counter recovers execution order; the
:class:`Tape` is that sorted record and :func:`backward` walks it once in
reverse.
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterator, Sequence

import numpy as np

DTYPE = np.float64

_counter = itertools.count()
_grad_enabled = True

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class ShapeError(ValueError):
    pass


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block (evaluation, rollouts for scoring)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "op", "_parents", "_backward", "_id")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self.name = name
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self._id = next(_counter)

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: tuple["Tensor", ...], backward: BackwardFn, op: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.name = None
        out.op = op
        out.grad = None
        out._id = next(_counter)
        if _grad_enabled:
            for p in parents:
                if p.requires_grad:
                    out.requires_grad = True
                    out._parents = parents
                    out._backward = backward
                    return out
        out.requires_grad = False
        out._parents = ()
        out._backward = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self.data.shape)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        else:
            self.grad.fill(0.0)

    def backward(self) -> "Tape":
        return backward(self)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{label})"

    # operator sugar; everything funnels into the primitive set
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops

        return ops.add(self, ops.neg(as_tensor(other)))

    def __rsub__(self, other):
        from . import ops

        return ops.add(ops.neg(self), other)

    def __mul__(self, other):
        from . import ops

        if isinstance(other, (int, float)):
            return ops.scale(self, float(other))
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops

        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)


def _not_scalar(shape) -> float:
    raise ValueError(f"item() needs a single-element tensor, got shape {shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Execution-ordered record of the nodes reachable from a loss."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_loss(cls, loss: Tensor) -> "Tape":
        seen: set[int] = set()
        nodes: list[Tensor] = []
        stack = [loss]
        while stack:
            node = stack.pop()
            if node._id in seen:
                continue
            seen.add(node._id)
            nodes.append(node)
            for p in node._parents:
                if p.requires_grad and p._id not in seen:
                    stack.append(p)
        nodes.sort(key=lambda n: n._id)
        return cls(nodes)

    def __len__(self) -> int:
        return len(self.nodes)

    def run_backward(self, loss: Tensor) -> None:
        for node in self.nodes:
            if node._backward is not None:
                node.grad = None
        if loss.grad is None or loss._backward is not None:
            loss.grad = np.ones_like(loss.data)
        else:
            loss.grad += 1.0
        for node in reversed(self.nodes):
            fn = node._backward
            if fn is None or node.grad is None:
                continue
            grads = fn(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                if parent._backward is None:
                    # leaf buffer persists across steps; accumulate in place
                    if parent.grad is None:
                        parent.grad = np.zeros_like(parent.data)
                    parent.grad += g
                elif parent.grad is None:
                    parent.grad = np.array(g, dtype=DTYPE, copy=True)
                else:
                    parent.grad = parent.grad + g


def backward(loss: Tensor) -> Tape:
    """Populate ``.grad`` of every grad-requiring tensor reachable from ``loss``.

    Raises ``ValueError`` for non-scalar losses.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward() needs a scalar loss, got shape {loss.shape}")
    tape = Tape.from_loss(loss)
    tape.run_backward(loss)
    return tape
