"""Tensor type and the gradient tape.

Operations record themselves on the innermost active :class:`Tape` whenever
one of their inputs requires a gradient.  Backward rules are written with the
same differentiable operations, so running :func:`grad` with
``create_graph=True`` re-records the backward pass on the tape and the result
can be differentiated again.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np

_FLOAT_TYPES = (np.dtype(np.float32), np.dtype(np.float64))

_local = threading.local()


def _stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> Optional["Tape"]:
    stack = _stack()
    return stack[-1] if stack else None


@contextmanager
def no_record():
    """Suspend recording on the current thread."""
    stack = _stack()
    stack.append(None)
    try:
        yield
    finally:
        stack.pop()


class Record:
    __slots__ = ("inputs", "output", "backward", "op", "index", "tape")

    def __init__(self, inputs, output, backward, op, index, tape):
        self.inputs = inputs
        self.output = output
        self.backward = backward
        self.op = op
        self.index = index
        self.tape = tape

    def __repr__(self) -> str:
        return f"Record({self.op}, #{self.index})"


class Tape:
    """Ordered list of recorded operations.

    Records are appended in execution order, so every record's inputs were
    produced by earlier records (or are leaves).
    """

    def __init__(self) -> None:
        self.records: list[Record] = []

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _stack().pop()

    def __len__(self) -> int:
        return len(self.records)

    def clear(self) -> None:
        for rec in self.records:
            rec.output.grad_node = None
        self.records.clear()


class Tensor:
    """Dense float array in row-major order with optional tape linkage."""

    __slots__ = ("data", "requires_grad", "grad_node", "__weakref__")

    __array_priority__ = 100.0

    def __init__(self, data, dtype=None, requires_grad: bool = False):
        arr = np.array(data, dtype=dtype, copy=True, order="C")
        if arr.dtype not in _FLOAT_TYPES:
            if dtype is not None:
                raise TypeError(f"unsupported dtype {arr.dtype}; use float32 or float64")
            arr = arr.astype(np.float64)
        if any(n < 1 for n in arr.shape):
            raise ValueError(f"all extents must be >= 1, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad_node: Optional[Record] = None

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = False
        t.grad_node = None
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def __len__(self) -> int:
        return self.data.shape[0]

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"


def record(data: np.ndarray, inputs: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    """Wrap an op result and, if needed, link it into the active tape."""
    out = Tensor._wrap(data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        rec = Record(tuple(inputs), out, backward, op, len(tape.records), tape)
        out.grad_node = rec
        tape.records.append(rec)
    return out


def grad(
    output: Tensor,
    inputs: Sequence[Tensor],
    grad_output: Optional[Tensor] = None,
    create_graph: bool = False,
) -> list[Tensor]:
    """Gradients of ``output`` with respect to each tensor in ``inputs``.

    Inputs the output does not depend on receive zero tensors.  With
    ``create_graph`` the backward computation is itself recorded on the tape
    that holds ``output``.
    """
    node = output.grad_node
    if node is None:
        raise RuntimeError("output is not linked to a tape (detached or created outside one)")
    if grad_output is None:
        grad_output = Tensor._wrap(np.ones_like(output.data))
    elif grad_output.shape != output.shape:
        raise ValueError(f"grad_output shape {grad_output.shape} != output shape {output.shape}")

    tape = node.tape
    wanted = {id(t) for t in inputs}
    grads: dict[int, Tensor] = {id(output): grad_output}

    ctx = _recording(tape) if create_graph else no_record()
    with ctx:
        for rec in reversed(tape.records[: node.index + 1]):
            key = id(rec.output)
            g = grads.get(key) if key in wanted else grads.pop(key, None)
            if g is None:
                continue
            for t, gi in zip(rec.inputs, rec.backward(g)):
                if gi is None or not t.requires_grad:
                    continue
                k = id(t)
                prev = grads.get(k)
                grads[k] = gi if prev is None else prev + gi

    out = []
    for t in inputs:
        g = grads.get(id(t))
        out.append(g if g is not None else Tensor._wrap(np.zeros_like(t.data)))
    return out


@contextmanager
def _recording(tape: Tape):
    stack = _stack()
    stack.append(tape)
    try:
        yield
    finally:
        stack.pop()


def backward(loss: Tensor, params: Mapping[str, Tensor] | Iterable[tuple[str, Tensor]]) -> dict[str, Tensor]:
    """Gradient map ``{name: dLoss/dParam}`` for every named parameter."""
    if loss.size != 1:
        raise ValueError(f"loss must be a scalar, got shape {loss.shape}")
    items = list(params.items()) if isinstance(params, Mapping) else list(params)
    gs = grad(loss, [p for _, p in items])
    return {name: g for (name, _), g in zip(items, gs)}
