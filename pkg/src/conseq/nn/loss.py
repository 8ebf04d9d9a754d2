"""Binary cross-entropy in the fused, overflow-safe logit form."""

from __future__ import annotations

import numpy as np

from conseq.errors import ShapeError
from conseq.nn.ops import sigmoid


def bce_with_logits(logits, targets):
    """Mean BCE over all elements, computed directly from logits.

    Uses softplus(z) - t*z per element, which is finite for every finite
    logit.  Returns (loss, gradient with respect to the logits).
    """
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if logits.shape != targets.shape:
        raise ShapeError(f"logits shape {logits.shape} != targets shape {targets.shape}")
    softplus = np.maximum(logits, 0.0) + np.log1p(np.exp(-np.abs(logits)))
    loss = float(np.mean(softplus - targets * logits))
    grad = (sigmoid(logits) - targets) / logits.size
    return loss, grad
