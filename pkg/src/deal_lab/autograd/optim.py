"""Adam with bias correction."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .tensor import ContractError, DimensionError, Tensor


@dataclass
class AdamState:
    lr: float = 0.003
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: dict[int, np.ndarray] = field(default_factory=dict)
    v: dict[int, np.ndarray] = field(default_factory=dict)


def adam_step(params: Sequence[Tensor], grads: Mapping[Tensor, np.ndarray], state: AdamState) -> AdamState:
    """Apply one in-place Adam update to ``params``.

    Moments are keyed by position in ``params``, so the same ordering must be
    passed on every call.
    """
    for p in params:
        if p not in grads:
            raise ContractError(f"no gradient for parameter {p.name or p.node_id}")
        if grads[p].shape != p.shape:
            raise DimensionError(f"gradient shape {grads[p].shape} does not match {p.shape}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for i, p in enumerate(params):
        g = grads[p]
        m = state.m.get(i)
        v = state.v.get(i)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[i], state.v[i] = m, v
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return state


class Adam:
    """Convenience wrapper binding a fixed parameter list to an :class:`AdamState`."""

    def __init__(self, params: Sequence[Tensor], lr: float = 0.003, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], epsilon=eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        grads = {p: (p.grad if p.grad is not None else np.zeros_like(p.data)) for p in self.params}
        adam_step(self.params, grads, self.state)
