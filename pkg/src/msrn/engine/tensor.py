"""Dense float64 tensors and the reverse-mode tape.

The engine keeps a deliberately small surface: a ``Tensor`` is a contiguous
row-major float64 array plus a gradient flag, and a ``Tape`` is an ordered
log of executed primitives.  Replaying the tape in exact reverse execution
order and accumulating adjoints implements backpropagation.
"""

from __future__ import annotations

import itertools
from typing import Callable, Dict, Optional, Sequence

import numpy as np

from ..errors import NumericError, ShapeError, UsageError

_uid_counter = itertools.count(1)


def check_finite(name: str, arr: np.ndarray) -> None:
    """Raise NumericError if *arr* contains NaN or Inf."""
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite values produced by '{name}'")


class Tensor:
    """N-dimensional float64 array in row-major order.

    Values are validated to be finite on construction, so every operation
    that wraps its result in a Tensor enforces the engine-wide no-NaN/Inf
    invariant.  ``requires_grad`` marks leaves (parameters, probed inputs)
    that backprop must deliver a gradient buffer for.
    """

    __slots__ = ("data", "requires_grad", "name", "uid")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        # np.array with order="C" keeps 0-d scalars 0-d (ascontiguousarray would
        # promote them to 1-d) while still guaranteeing a contiguous buffer.
        arr = np.array(data, dtype=np.float64, order="C", copy=None)
        check_finite(name or "tensor", arr)
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name
        self.uid = next(_uid_counter)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        tag = f" '{self.name}'" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"


class TapeEntry:
    """One executed primitive: output id, input tensors, backward closure.

    ``backward(grad_out) -> sequence of gradients`` aligned with ``inputs``;
    an entry may return None for inputs it does not differentiate against.
    """

    __slots__ = ("op", "output_uid", "inputs", "backward")

    def __init__(self, op: str, output_uid: int, inputs: Sequence[Tensor],
                 backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]):
        self.op = op
        self.output_uid = output_uid
        self.inputs = tuple(inputs)
        self.backward = backward


class Tape:
    """Single-writer record of forward primitives, replayable once."""

    def __init__(self):
        self.entries: list[TapeEntry] = []
        self.watched: Dict[int, Tensor] = {}
        self.consumed = False

    def record(self, op: str, output: Tensor, inputs: Sequence[Tensor], backward) -> None:
        if self.consumed:
            raise UsageError("cannot record on a tape that was already replayed")
        for t in inputs:
            if t.requires_grad:
                self.watched[t.uid] = t
        self.entries.append(TapeEntry(op, output.uid, inputs, backward))


def backprop(tape: Tape, loss: Tensor) -> Dict[int, Tensor]:
    """Replay *tape* backward from the scalar *loss*.

    Returns a gradient map ``uid -> Tensor`` covering every tensor marked
    ``requires_grad`` that the forward pass touched; tensors that did not
    participate in *loss* receive exact zeros.  A tape can only be replayed
    once.
    """
    if tape.consumed:
        raise UsageError("tape already consumed by a previous backprop")
    if loss.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
    if not any(e.output_uid == loss.uid for e in tape.entries):
        raise UsageError("loss tensor was not produced on this tape")
    tape.consumed = True

    adjoint: Dict[int, np.ndarray] = {loss.uid: np.ones_like(loss.data)}
    for entry in reversed(tape.entries):
        grad_out = adjoint.pop(entry.output_uid, None)
        if grad_out is None:
            continue
        grads = entry.backward(grad_out)
        for tensor, grad in zip(entry.inputs, grads):
            if grad is None:
                continue
            if grad.shape != tensor.data.shape:
                raise ShapeError(
                    f"backward of '{entry.op}' produced gradient of shape "
                    f"{grad.shape} for input of shape {tensor.data.shape}")
            existing = adjoint.get(tensor.uid)
            if existing is None:
                adjoint[tensor.uid] = grad
            else:
                existing += grad

    result: Dict[int, Tensor] = {}
    for uid, tensor in tape.watched.items():
        grad = adjoint.get(uid)
        if grad is None:
            grad = np.zeros_like(tensor.data)
        check_finite("backprop", grad)
        result[uid] = Tensor(grad)
    return result
