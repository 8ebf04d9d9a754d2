"""Additive attention with a learned context vector.

Scores are tanh(h W + b) . u per position; a masked softmax turns them into
weights and the summary is the weight-averaged input.
"""

from __future__ import annotations

import numpy as np

from conseq.nn.ops import masked_softmax, masked_softmax_backward
from conseq.nn.params import Parameter, glorot_uniform, normal_init


class AdditiveAttention:
    def __init__(self, n_in: int, n_attn: int, rng: np.random.Generator, name: str,
                 dtype=np.float64):
        self.n_in = n_in
        self.n_attn = n_attn
        self.weight = Parameter(f"{name}.weight", glorot_uniform(rng, n_in, n_attn, (n_in, n_attn), dtype))
        self.bias = Parameter(f"{name}.bias", np.zeros(n_attn, dtype=dtype))
        self.context = Parameter(f"{name}.context", normal_init(rng, (n_attn,), dtype=dtype))
        self._cache = None

    def parameters(self):
        return [self.weight, self.bias, self.context]

    def forward(self, h, mask, empty: str = "error"):
        """h: (N, L, K); mask: (N, L).  Returns (summary (N, K), weights (N, L)).

        empty="zeros" makes fully masked rows yield zero summaries and weights
        instead of raising; the caller is expected to exclude them downstream.
        """
        a = np.tanh(h @ self.weight.value + self.bias.value)
        scores = np.einsum("nla,a->nl", a, self.context.value)
        weights = masked_softmax(scores, mask, empty=empty)
        summary = np.einsum("nl,nlk->nk", weights, h)
        self._cache = (h, a, weights)
        return summary, weights

    def backward(self, dsummary):
        """dsummary: (N, K).  Returns dh of shape (N, L, K).

        The returned weights are inspection output; no gradient flows to them.
        """
        h, a, weights = self._cache
        dweights = np.einsum("nk,nlk->nl", dsummary, h)
        dh = np.einsum("nl,nk->nlk", weights, dsummary)
        dscores = masked_softmax_backward(weights, dweights)
        self.context.grad += np.einsum("nl,nla->a", dscores, a)
        da = np.einsum("nl,a->nla", dscores, self.context.value)
        dpre = da * (1.0 - a**2)
        self.weight.grad += np.einsum("nlk,nla->ka", h, dpre)
        self.bias.grad += np.einsum("nla->a", dpre)
        dh += dpre @ self.weight.value.T
        return dh
