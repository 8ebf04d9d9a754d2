"""Dense numeric substrate: parameters, layers with hand-derived backward
passes, the Adam optimizer, loss, and finite-difference gradient checking.

Everything runs on plain numpy arrays.  Tensors are float64 by default (the
gradient checker requires it); float32 may be selected for training speed.
"""

from conseq.nn.adam import AdamState, adam_step
from conseq.nn.attention import AdditiveAttention
from conseq.nn.checkpoint import load_checkpoint, save_checkpoint
from conseq.nn.gradcheck import GradCheckReport, grad_check
from conseq.nn.gru import BiGRU, GRUCell, MaskedGRU
from conseq.nn.loss import bce_with_logits
from conseq.nn.ops import (
    Dropout,
    Embedding,
    LayerNorm,
    Linear,
    gelu,
    masked_softmax,
    masked_softmax_backward,
    sigmoid,
    softmax,
)
from conseq.nn.params import Parameter, glorot_uniform, normal_init

__all__ = [
    "AdamState",
    "AdditiveAttention",
    "BiGRU",
    "Dropout",
    "Embedding",
    "GRUCell",
    "GradCheckReport",
    "LayerNorm",
    "Linear",
    "MaskedGRU",
    "Parameter",
    "adam_step",
    "bce_with_logits",
    "gelu",
    "glorot_uniform",
    "grad_check",
    "load_checkpoint",
    "masked_softmax",
    "masked_softmax_backward",
    "normal_init",
    "save_checkpoint",
    "sigmoid",
    "softmax",
]
