"""
tensor.py
---------
Reverse-mode automatic differentiation over dense float64 numpy arrays.

A ``Tensor`` produced by a primitive whose inputs require gradients is
recorded on the active ``Tape``. ``backward(loss)`` replays that tape in
reverse and returns ``{leaf tensor: gradient tensor}``.

Tapes are per thread: ``with Tape():`` pushes an explicit tape, otherwise
each thread records on a lazily created default tape that is replaced once
it has been consumed by ``backward``. ``no_grad()`` disables recording.
"""

from __future__ import annotations

import itertools
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from src.utils.errors import NonFiniteError, ShapeError, TapeError

_tape_ids = itertools.count(1)
_local = threading.local()


# ── Tape ─────────────────────────────────────────────────────────────────────

class Node:
    __slots__ = ("output", "parents", "backward_fn", "op")

    def __init__(self, output: "Tensor", parents: tuple, backward_fn: Callable, op: str):
        self.output = output
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op


class Tape:
    """Ordered record of primitive applications (creation order is topological)."""

    def __init__(self):
        self.id = next(_tape_ids)
        self.nodes: list[Node] = []
        self.consumed = False

    def record(self, node: Node) -> None:
        if self.consumed:
            raise TapeError(f"tape {self.id} was already consumed by backward()")
        self.nodes.append(node)

    def __len__(self) -> int:
        return len(self.nodes)

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _stack().pop()


def _stack() -> list:
    if not hasattr(_local, "stack"):
        _local.stack = []
        _local.default = None
        _local.grad_enabled = True
    return _local.stack


def current_tape() -> Tape:
    stack = _stack()
    if stack:
        return stack[-1]
    if _local.default is None or _local.default.consumed:
        _local.default = Tape()
    return _local.default


def grad_enabled() -> bool:
    _stack()
    return _local.grad_enabled


class no_grad:
    """Context manager: primitives evaluate without recording."""

    def __enter__(self):
        _stack()
        self._prev = _local.grad_enabled
        _local.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _local.grad_enabled = self._prev


# ── Tensor ───────────────────────────────────────────────────────────────────

class Tensor:
    """
    Parameters
    ----------
    values        : array-like, stored as a float64 numpy array.
    requires_grad : mark the tensor as a differentiable leaf.
    name          : optional label (parameter name, used in error messages).
    """

    __slots__ = ("values", "requires_grad", "name", "_node", "tape_id", "__weakref__")

    def __init__(self, values, requires_grad: bool = False, name: str | None = None):
        self.values = np.array(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._node: Node | None = None
        self.tape_id: int | None = None

    # ── Views ────────────────────────────────────────────────────────────────

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def size(self) -> int:
        return int(self.values.size)

    def numpy(self) -> np.ndarray:
        return self.values

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.values.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.values.copy(), requires_grad=False, name=self.name)

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # ── Operators (delegate to primitives) ───────────────────────────────────

    def __add__(self, other):
        from src.autodiff import ops
        return ops.add(self, _as_tensor(other, self))

    def __radd__(self, other):
        from src.autodiff import ops
        return ops.add(_as_tensor(other, self), self)

    def __sub__(self, other):
        from src.autodiff import ops
        return ops.sub(self, _as_tensor(other, self))

    def __rsub__(self, other):
        from src.autodiff import ops
        return ops.sub(_as_tensor(other, self), self)

    def __mul__(self, other):
        from src.autodiff import ops
        if isinstance(other, Tensor):
            return ops.mul(self, other)
        return ops.scalar_mul(self, float(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        from src.autodiff import ops
        return ops.scalar_mul(self, -1.0)

    def __matmul__(self, other):
        from src.autodiff import ops
        return ops.matmul(self, other)

    # ── Graph construction ───────────────────────────────────────────────────

    @staticmethod
    def from_op(
        op: str,
        values: np.ndarray,
        parents: Sequence["Tensor"],
        backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]],
    ) -> "Tensor":
        """
        Wrap a primitive's forward value and record it on the active tape.

        ``backward_fn(grad_out)`` must return one gradient (or ``None``) per
        parent, each shaped like that parent.
        """
        values = np.asarray(values, dtype=np.float64)
        if not np.all(np.isfinite(values)):
            raise NonFiniteError(f"{op} produced non-finite output")

        out = Tensor.__new__(Tensor)
        out.values = values
        out.name = None
        out._node = None
        out.tape_id = None
        out.requires_grad = False

        if grad_enabled() and any(p.requires_grad for p in parents):
            tape = current_tape()
            out.requires_grad = True
            out._node = Node(out, tuple(parents), backward_fn, op)
            out.tape_id = tape.id
            tape.record(out._node)
        return out


def _as_tensor(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.full(like.shape, float(value)))


def parameter(values, name: str) -> Tensor:
    return Tensor(values, requires_grad=True, name=name)


# ── Backward ─────────────────────────────────────────────────────────────────

def _find_tape(tape_id: int) -> Tape | None:
    for tape in _stack():
        if tape.id == tape_id:
            return tape
    if _local.default is not None and _local.default.id == tape_id:
        return _local.default
    return None


def backward(loss: Tensor, wrt: Iterable[Tensor] | None = None) -> dict:
    """
    Reverse-mode sweep from a scalar ``loss``.

    Returns a map from every ``requires_grad`` leaf reached from the loss to
    its gradient. Leaves listed in ``wrt`` but unreachable get zeros. The
    tape is consumed.
    """
    if loss.size != 1:
        raise TapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if loss._node is None:
        raise TapeError("loss is detached: it was not produced on an active tape")

    tape = _find_tape(loss.tape_id)
    if tape is None:
        raise TapeError(f"tape {loss.tape_id} is not active on this thread")
    if tape.consumed:
        raise TapeError(f"tape {tape.id} was already consumed by backward()")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.values)}
    leaves: dict[int, Tensor] = {}

    for node in reversed(tape.nodes):
        g_out = grads.pop(id(node.output), None)
        if g_out is None:
            continue
        parent_grads = node.backward_fn(g_out)
        for parent, g in zip(node.parents, parent_grads):
            if g is None or not parent.requires_grad:
                continue
            if g.shape != parent.shape:
                raise ShapeError(
                    f"{node.op} backward produced gradient {g.shape} for input {parent.shape}"
                )
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = g
            if parent._node is None:
                leaves[key] = parent

    tape.consumed = True
    tape.nodes.clear()

    result = {leaf: Tensor(grads[key]) for key, leaf in leaves.items()}
    if wrt is not None:
        for leaf in wrt:
            if leaf not in result:
                result[leaf] = Tensor(np.zeros_like(leaf.values))
    return result
