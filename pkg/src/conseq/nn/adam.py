"""Adam optimizer with bias correction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class AdamState:
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning rate must be positive, got {self.learning_rate}")


def adam_step(params, state: AdamState) -> None:
    """One optimizer step over the parameter list; gradients are left intact."""
    state.step_count += 1
    t = state.step_count
    correction1 = 1.0 - state.beta1**t
    correction2 = 1.0 - state.beta2**t
    for p in params:
        p.adam_m[...] = state.beta1 * p.adam_m + (1.0 - state.beta1) * p.grad
        p.adam_v[...] = state.beta2 * p.adam_v + (1.0 - state.beta2) * p.grad**2
        m_hat = p.adam_m / correction1
        v_hat = p.adam_v / correction2
        p.value[...] -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
