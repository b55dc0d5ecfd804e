"""Adam with bias correction, skipping frozen parameters."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import UsageError
from .tensor import Parameter


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Sequence[Parameter], state: AdamState) -> None:
    """Apply one Adam update in place to every unfrozen parameter."""
    live = [p for p in params if not p.frozen]
    for p in live:
        if p.grad is None:
            raise UsageError(f"parameter {p.name!r} has no gradient")
        if p.grad.shape != p.shape:
            raise UsageError(f"gradient shape mismatch for {p.name!r}")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p in live:
        g = p.grad
        m = state.m.get(p.name)
        v = state.v.get(p.name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        if m.shape != p.shape:
            raise UsageError(f"optimizer state shape mismatch for {p.name!r}")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        state.m[p.name] = m
        state.v[p.name] = v
        update = (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.data.dtype, copy=False)
        p.data -= update


def zero_grads(params: Sequence[Parameter]) -> None:
    for p in params:
        p.grad = None


class Adam:
    def __init__(self, params: Sequence[Parameter], lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)

    @property
    def lr(self) -> float:
        return self.state.lr

    @lr.setter
    def lr(self, value: float) -> None:
        self.state.lr = value

    def step(self) -> None:
        adam_step(self.params, self.state)

    def zero_grad(self) -> None:
        zero_grads(self.params)
