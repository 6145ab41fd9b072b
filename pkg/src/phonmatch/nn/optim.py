from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Sequence

import numpy as np

from .tensor import Parameter

BETA1 = 0.9
BETA2 = 0.999
EPSILON = 1e-7


@dataclass
class AdamState:
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Sequence[Parameter], grads: Sequence[Optional[np.ndarray]], state: AdamState,
              lr: float, beta1: float = BETA1, beta2: float = BETA2, eps: float = EPSILON) -> None:
    """One bias-corrected Adam update, applied in place.

    Frozen parameters and parameters without a gradient are skipped, so
    their moments are never created and their values never change.
    """
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p, g in zip(params, grads):
        if not p.trainable or g is None:
            continue
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros_like(p.data)
            state.v[p.name] = np.zeros_like(p.data)
        v = state.v[p.name]
        g = g.astype(p.data.dtype, copy=False)
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.data.dtype)


class Adam:
    def __init__(self, params: Iterable[Parameter], lr: float = 1e-3, state: Optional[AdamState] = None):
        self.params = list(params)
        self.lr = lr
        self.state = state if state is not None else AdamState()

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        adam_step(self.params, [p.grad for p in self.params], self.state, self.lr)
