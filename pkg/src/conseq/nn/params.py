"""Trainable parameters and their initializers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Parameter:
    """A named value tensor with its gradient and Adam moment buffers.

    All four arrays share one shape.  Gradients accumulate across backward
    calls; the training loop zeroes them at the start of each batch.
    """

    name: str
    value: np.ndarray
    grad: np.ndarray = field(init=False)
    adam_m: np.ndarray = field(init=False)
    adam_v: np.ndarray = field(init=False)

    def __post_init__(self):
        self.grad = np.zeros_like(self.value)
        self.adam_m = np.zeros_like(self.value)
        self.adam_v = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0.0


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape, dtype=np.float64):
    """Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out))."""
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape).astype(dtype)


def normal_init(rng: np.random.Generator, shape, scale: float = 0.1, dtype=np.float64):
    """Gaussian init used for embedding tables and attention context vectors."""
    return (rng.standard_normal(shape) * scale).astype(dtype)


def zero_param(name: str, shape, dtype=np.float64) -> Parameter:
    return Parameter(name, np.zeros(shape, dtype=dtype))
