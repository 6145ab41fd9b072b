"""Dense tensors with reverse-mode gradients.

Every tensor produced by a recording op carries a sequence number from a
global counter, so the set of ops reachable from a loss is a tape in
execution order. ``backward`` replays it in reverse, visiting each op once
and accumulating parent gradients additively.
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

_SEQ = itertools.count()
_STATE = {"dtype": np.float32, "grad_enabled": True}


def get_default_dtype():
    return _STATE["dtype"]


def set_default_dtype(dtype) -> None:
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype!r}")
    _STATE["dtype"] = dtype


@contextlib.contextmanager
def default_dtype(dtype) -> Iterator[None]:
    """Temporarily switch the dtype used for new float tensors (e.g. float64 in gradient checks)."""
    previous = _STATE["dtype"]
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _STATE["dtype"] = previous


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    previous = _STATE["grad_enabled"]
    _STATE["grad_enabled"] = False
    try:
        yield
    finally:
        _STATE["grad_enabled"] = previous


def grad_enabled() -> bool:
    return _STATE["grad_enabled"]


class NonFiniteError(FloatingPointError):
    """Raised when an op produces NaN or Inf."""


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "op", "seq")

    def __init__(self, data, requires_grad: bool = False, parents: Sequence["Tensor"] = (),
                 backward_fn: Optional[BackwardFn] = None, op: str = "leaf"):
        arr = np.asarray(data)
        if arr.dtype.kind == "f" and op in ("leaf", "param"):
            arr = arr.astype(get_default_dtype(), copy=False)
        if arr.dtype.kind == "f" and not np.isfinite(arr).all():
            raise NonFiniteError(f"non-finite values produced by {op}")
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.op = op
        self.seq = next(_SEQ)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without an explicit gradient needs a scalar")
            grad = np.ones_like(self.data)
        nodes = _reachable(self)
        self.grad = grad if self.grad is None else self.grad + grad
        for node in sorted(nodes, key=lambda n: n.seq, reverse=True):
            if node.backward_fn is None or node.grad is None:
                continue
            parent_grads = node.backward_fn(node.grad)
            for parent, g in zip(node.parents, parent_grads):
                if g is None or not parent.requires_grad:
                    continue
                if g.shape != parent.data.shape:
                    raise RuntimeError(f"{node.op}: gradient shape {g.shape} != {parent.data.shape}")
                parent.grad = g if parent.grad is None else parent.grad + g
            # intermediate gradients are not kept once propagated
            if node.parents:
                node.grad = None


def _reachable(root: Tensor) -> list:
    seen = set()
    stack = [root]
    out = []
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        out.append(node)
        stack.extend(p for p in node.parents if p.requires_grad)
    return out


def make(data: np.ndarray, parents: Sequence[Tensor], backward_fn: BackwardFn, op: str) -> Tensor:
    """Wrap an op result, recording it only when some parent needs a gradient."""
    needs = grad_enabled() and any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=needs, parents=parents if needs else (),
                  backward_fn=backward_fn if needs else None, op=op)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Parameter(Tensor):
    """A named model tensor. Frozen parameters never receive optimizer updates."""

    __slots__ = ("name", "trainable")

    def __init__(self, data, name: str, trainable: bool = True):
        super().__init__(data, requires_grad=trainable, op="param")
        self.name = name
        self.trainable = trainable

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, trainable={self.trainable})"
