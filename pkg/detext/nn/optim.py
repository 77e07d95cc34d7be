"""Adam with bias correction."""

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from detext.nn.tensor import ParameterTensor

BETA1 = 0.9
BETA2 = 0.999
EPSILON = 1e-8


@dataclass
class AdamState:
    """First and second moments per parameter name, plus the step counter."""
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    def moments(self, p: ParameterTensor) -> tuple[np.ndarray, np.ndarray]:
        if p.name not in self.m:
            self.m[p.name] = np.zeros_like(p.data)
            self.v[p.name] = np.zeros_like(p.data)
        return self.m[p.name], self.v[p.name]


def adam_step(
    params: Sequence[ParameterTensor],
    state: AdamState,
    learning_rate: float,
    zero_grad: bool = True,
) -> AdamState:
    """
    One Adam update of every trainable parameter in place.

    The caller may pass zero_grad=False when several optimizers share one
    backward pass and gradients are cleared after the last of them.
    """
    state.t += 1
    correction1 = 1.0 - BETA1 ** state.t
    correction2 = 1.0 - BETA2 ** state.t
    for p in params:
        if not p.trainable:
            continue
        m, v = state.moments(p)
        g = p.grad
        m *= BETA1
        m += (1.0 - BETA1) * g
        v *= BETA2
        v += (1.0 - BETA2) * g * g
        if learning_rate:
            m_hat = m / correction1
            v_hat = v / correction2
            p.data -= (learning_rate * m_hat / (np.sqrt(v_hat) + EPSILON)).astype(p.dtype)
            p.bump()
        if zero_grad:
            p.zero_grad()
    return state
