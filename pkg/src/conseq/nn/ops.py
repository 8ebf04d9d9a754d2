"""Activations and the basic differentiable layers.

Layers cache whatever the backward pass needs on the instance, so each
forward must be paired with one backward before the next forward.  Reductions
over sequence axes go through einsum: its fixed accumulation order keeps
outputs bitwise identical when extra all-masked padding is appended.
"""

from __future__ import annotations

import numpy as np

from conseq.errors import InvalidInputError, ShapeError
from conseq.nn.params import Parameter, glorot_uniform, normal_init

_SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)


def sigmoid(x):
    """Elementwise 1/(1+e^-x), overflow-safe on both tails."""
    x = np.asarray(x, dtype=np.float64) if np.asarray(x).dtype.kind != "f" else np.asarray(x)
    e = np.exp(-np.abs(x))  # exponent is always <= 0
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def gelu(x):
    """Gaussian error linear unit (tanh approximation)."""
    u = _SQRT_2_OVER_PI * (x + 0.044715 * x**3)
    return 0.5 * x * (1.0 + np.tanh(u))


def gelu_backward(x, dy):
    u = _SQRT_2_OVER_PI * (x + 0.044715 * x**3)
    t = np.tanh(u)
    du = _SQRT_2_OVER_PI * (1.0 + 3 * 0.044715 * x**2)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * du)


def softmax(x, axis: int = -1):
    """Max-shifted softmax along one axis (no masking)."""
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def masked_softmax(scores, mask, empty: str = "error"):
    """Softmax over the last axis restricted to mask==1 positions.

    Masked positions get exactly zero weight; each unmasked slice sums to 1.
    Slices whose mask is all zero raise InvalidInputError, or yield an
    all-zero row when empty="zeros" (used for absent sentences in a padded
    document grid).
    """
    scores = np.asarray(scores)
    mask = np.asarray(mask, dtype=scores.dtype)
    if scores.shape != mask.shape:
        raise ShapeError(f"scores shape {scores.shape} != mask shape {mask.shape}")
    present = mask > 0
    any_present = present.any(axis=-1)
    if not any_present.all():
        if empty == "error":
            raise InvalidInputError("softmax slice with every position masked")
    neg = np.where(present, scores, -np.inf)
    peak = np.max(neg, axis=-1, keepdims=True)
    peak = np.where(np.isfinite(peak), peak, 0.0)  # fully masked slices
    # masked scores go to -inf BEFORE exp so huge garbage values cannot overflow
    e = np.exp(np.where(present, scores - peak, -np.inf))
    denom = np.einsum("...i->...", e)[..., None]
    denom = np.where(denom == 0.0, 1.0, denom)
    return e / denom


def masked_softmax_backward(weights, dweights):
    """Jacobian-vector product of masked_softmax given its output weights."""
    inner = np.einsum("...i,...i->...", dweights, weights)[..., None]
    return weights * (dweights - inner)


class Linear:
    """Affine map y = x @ W + b over the last axis."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, name: str,
                 dtype=np.float64):
        self.n_in = n_in
        self.n_out = n_out
        self.weight = Parameter(f"{name}.weight", glorot_uniform(rng, n_in, n_out, (n_in, n_out), dtype))
        self.bias = Parameter(f"{name}.bias", np.zeros(n_out, dtype=dtype))
        self._x = None

    def parameters(self):
        return [self.weight, self.bias]

    def forward(self, x):
        x = np.asarray(x)
        if x.shape[-1] != self.n_in:
            raise ShapeError(
                f"linear input shape {x.shape} incompatible with weight shape "
                f"{self.weight.value.shape}"
            )
        self._x = x
        return x @ self.weight.value + self.bias.value

    def backward(self, dy):
        x = self._x
        flat_x = x.reshape(-1, self.n_in)
        flat_dy = dy.reshape(-1, self.n_out)
        self.weight.grad += flat_x.T @ flat_dy
        self.bias.grad += flat_dy.sum(axis=0)
        return dy @ self.weight.value.T


class Embedding:
    """Dense row lookup into a trainable table."""

    def __init__(self, vocab_size: int, dim: int, rng: np.random.Generator, name: str,
                 dtype=np.float64):
        self.vocab_size = vocab_size
        self.table = Parameter(f"{name}.table", normal_init(rng, (vocab_size, dim), dtype=dtype))
        self._ids = None

    def parameters(self):
        return [self.table]

    def forward(self, ids):
        ids = np.asarray(ids)
        if ids.size and (ids.min() < 0 or ids.max() >= self.vocab_size):
            raise IndexError(
                f"token id out of range [0, {self.vocab_size}): "
                f"min {ids.min()}, max {ids.max()}"
            )
        self._ids = ids
        return self.table.value[ids]

    def backward(self, dy):
        np.add.at(self.table.grad, self._ids, dy)
        return None


class Dropout:
    """Inverted dropout: scales survivors by 1/(1-p); identity in eval mode."""

    def __init__(self, p: float):
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout probability must be in [0, 1), got {p}")
        self.p = p
        self._mask = None

    def parameters(self):
        return []

    def forward(self, x, mode: str, rng: np.random.Generator | None = None):
        if mode == "train" and self.p > 0.0:
            if rng is None:
                raise ValueError("training-mode dropout needs an rng stream")
            self._mask = (rng.random(x.shape) >= self.p) / (1.0 - self.p)
            return x * self._mask
        self._mask = None
        return x

    def backward(self, dy):
        if self._mask is None:
            return dy
        return dy * self._mask


class LayerNorm:
    """Per-vector normalization over the last axis, then affine rescale."""

    EPS = 1e-9

    def __init__(self, dim: int, name: str, dtype=np.float64):
        self.gamma = Parameter(f"{name}.gamma", np.ones(dim, dtype=dtype))
        self.beta = Parameter(f"{name}.beta", np.zeros(dim, dtype=dtype))
        self._cache = None

    def parameters(self):
        return [self.gamma, self.beta]

    def forward(self, x):
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc**2).mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + self.EPS)
        xhat = xc * inv
        self._cache = (xhat, inv)
        return self.gamma.value * xhat + self.beta.value

    def backward(self, dy):
        xhat, inv = self._cache
        dim = dy.shape[-1]
        self.gamma.grad += (dy * xhat).reshape(-1, dim).sum(axis=0)
        self.beta.grad += dy.reshape(-1, dim).sum(axis=0)
        dxhat = dy * self.gamma.value
        mean_dxhat = dxhat.mean(axis=-1, keepdims=True)
        mean_proj = (dxhat * xhat).mean(axis=-1, keepdims=True)
        return inv * (dxhat - mean_dxhat - xhat * mean_proj)
