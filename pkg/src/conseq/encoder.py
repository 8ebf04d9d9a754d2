"""Small transformer encoder classifier trained from scratch.

Token embeddings plus fixed sinusoidal position encodings feed a stack of
post-norm encoder layers (multi-head self-attention with a key padding mask,
residual + layer norm, position-wise feed-forward with GELU, residual +
layer norm).  The transformed CLS state is pooled through tanh, dropped out
in training mode, and mapped to five independent sigmoid outputs.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from conseq import subword
from conseq.errors import ConfigError, InvalidInputError
from conseq.han import fingerprint_meta
from conseq.labels import NUM_LABELS
from conseq.nn import (
    Dropout,
    Embedding,
    LayerNorm,
    Linear,
    masked_softmax,
    masked_softmax_backward,
    sigmoid,
)
from conseq.nn.ops import gelu, gelu_backward


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    layers: int = 2
    hidden_dim: int = 64
    heads: int = 4
    ffn_dim: int = 256
    max_len: int = 256
    dropout_p: float = 0.3
    num_labels: int = NUM_LABELS
    dtype: str = "float64"

    def __post_init__(self):
        if self.hidden_dim % self.heads != 0:
            raise ConfigError(
                f"hidden_dim {self.hidden_dim} must be divisible by heads {self.heads}"
            )
        if self.max_len < 2:
            raise ConfigError(f"max_len must be >= 2 (room for CLS/SEP), got {self.max_len}")
        if self.layers < 0:
            raise ConfigError(f"layers must be >= 0, got {self.layers}")
        for name in ("vocab_size", "hidden_dim", "heads", "ffn_dim", "num_labels"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"EncoderConfig.{name} must be positive")
        if self.num_labels != NUM_LABELS:
            raise ConfigError(f"EncoderConfig.num_labels must be {NUM_LABELS}")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError("EncoderConfig.dtype must be float64 or float32")

    def to_dict(self) -> dict:
        return asdict(self)


def sinusoidal_position_encoding(max_len: int, dim: int, dtype=np.float64):
    positions = np.arange(max_len, dtype=np.float64)[:, None]
    freqs = np.exp(-np.log(10000.0) * (np.arange(0, dim, 2, dtype=np.float64) / dim))
    table = np.zeros((max_len, dim), dtype=np.float64)
    table[:, 0::2] = np.sin(positions * freqs)
    table[:, 1::2] = np.cos(positions * freqs[: table[:, 1::2].shape[1]])
    return table.astype(dtype)


class EncoderLayer:
    """Self-attention and feed-forward sublayers, post-norm residuals."""

    def __init__(self, config: EncoderConfig, rng: np.random.Generator, name: str):
        d = config.hidden_dim
        dtype = np.dtype(config.dtype)
        self.heads = config.heads
        self.head_dim = d // config.heads
        self.wq = Linear(d, d, rng, f"{name}.wq", dtype)
        self.wk = Linear(d, d, rng, f"{name}.wk", dtype)
        self.wv = Linear(d, d, rng, f"{name}.wv", dtype)
        self.wo = Linear(d, d, rng, f"{name}.wo", dtype)
        self.norm1 = LayerNorm(d, f"{name}.norm1", dtype)
        self.ffn_in = Linear(d, config.ffn_dim, rng, f"{name}.ffn_in", dtype)
        self.ffn_out = Linear(config.ffn_dim, d, rng, f"{name}.ffn_out", dtype)
        self.norm2 = LayerNorm(d, f"{name}.norm2", dtype)
        self._cache = None

    def parameters(self):
        return (
            self.wq.parameters() + self.wk.parameters() + self.wv.parameters()
            + self.wo.parameters() + self.norm1.parameters()
            + self.ffn_in.parameters() + self.ffn_out.parameters()
            + self.norm2.parameters()
        )

    def _split(self, x):
        b, length, _ = x.shape
        return x.reshape(b, length, self.heads, self.head_dim).transpose(0, 2, 1, 3)

    def _join(self, x):
        b, heads, length, head_dim = x.shape
        return x.transpose(0, 2, 1, 3).reshape(b, length, heads * head_dim)

    def forward(self, x, mask):
        """x: (B, L, D); mask: (B, L).  Returns (y, attention (B, heads, L, L))."""
        b, length, _ = x.shape
        q = self._split(self.wq.forward(x))
        k = self._split(self.wk.forward(x))
        v = self._split(self.wv.forward(x))
        scale = 1.0 / np.sqrt(self.head_dim)
        scores = np.matmul(q, k.transpose(0, 1, 3, 2)) * scale
        key_mask = np.broadcast_to(mask[:, None, None, :], scores.shape)
        weights = masked_softmax(scores, key_mask)
        context = np.einsum("bhij,bhjd->bhid", weights, v)
        attn_out = self.wo.forward(self._join(context))
        x1 = self.norm1.forward(x + attn_out)
        pre = self.ffn_in.forward(x1)
        act = gelu(pre)
        ffn = self.ffn_out.forward(act)
        y = self.norm2.forward(x1 + ffn)
        self._cache = (q, k, v, weights, pre, scale)
        return y, weights

    def backward(self, dy):
        q, k, v, weights, pre, scale = self._cache
        d_res2 = self.norm2.backward(dy)
        d_act = self.ffn_out.backward(d_res2)
        d_pre = gelu_backward(pre, d_act)
        dx1 = d_res2 + self.ffn_in.backward(d_pre)
        d_res1 = self.norm1.backward(dx1)
        d_context = self._split(self.wo.backward(d_res1))
        d_weights = np.einsum("bhid,bhjd->bhij", d_context, v)
        dv = np.einsum("bhij,bhid->bhjd", weights, d_context)
        d_scores = masked_softmax_backward(weights, d_weights) * scale
        dq = np.matmul(d_scores, k)
        dk = np.matmul(d_scores.transpose(0, 1, 3, 2), q)
        dx = d_res1
        dx = dx + self.wq.backward(self._join(dq))
        dx = dx + self.wk.backward(self._join(dk))
        dx = dx + self.wv.backward(self._join(dv))
        return dx


class TransformerClassifier:
    backbone = "encoder"

    def __init__(self, config: EncoderConfig, vocab: subword.SubwordVocab, seed: int = 0):
        if config.vocab_size != len(vocab):
            raise ConfigError(
                f"config vocab_size {config.vocab_size} != vocabulary size {len(vocab)}"
            )
        self.config = config
        self.vocab = vocab
        dtype = np.dtype(config.dtype)
        rng = np.random.default_rng(seed)
        d = config.hidden_dim
        self.embedding = Embedding(config.vocab_size, d, rng, "embedding", dtype)
        self.position = sinusoidal_position_encoding(config.max_len, d, dtype)
        self.layers = [EncoderLayer(config, rng, f"layer{i}") for i in range(config.layers)]
        self.pooler = Linear(d, d, rng, "pooler", dtype)
        self.dropout = Dropout(config.dropout_p)
        self.head = Linear(d, config.num_labels, rng, "head", dtype)
        self.attention_maps = None
        self._pool_cache = None

    def parameter_groups(self) -> dict[str, list]:
        groups = {"embedding": self.embedding.parameters()}
        for i, layer in enumerate(self.layers):
            groups[f"layer{i}"] = layer.parameters()
        groups["pooler"] = self.pooler.parameters()
        groups["head"] = self.head.parameters()
        return groups

    def parameters(self):
        return [p for group in self.parameter_groups().values() for p in group]

    def encode_documents(self, docs):
        ids = []
        masks = []
        for doc in docs:
            i, m = subword.subword_encode(doc.tokens, self.vocab, self.config.max_len)
            ids.append(i)
            masks.append(m)
        return np.stack(ids), np.stack(masks)

    def forward(self, ids, mask, mode: str = "eval", rng=None):
        """ids, mask: (B, L).  Returns logits (B, num_labels)."""
        if ids.ndim == 1:
            ids = ids[None]
            mask = mask[None]
        if not (mask.sum(axis=1) > 0).all():
            raise InvalidInputError("sequence with zero unmasked tokens")
        mask = mask.astype(np.dtype(self.config.dtype), copy=False)
        length = ids.shape[1]
        x = self.embedding.forward(ids) + self.position[:length]
        maps = []
        for layer in self.layers:
            x, weights = layer.forward(x, mask)
            maps.append(weights)
        self.attention_maps = maps
        cls_state = x[:, 0]
        pooled_pre = self.pooler.forward(cls_state)
        pooled = np.tanh(pooled_pre)
        dropped = self.dropout.forward(pooled, mode, rng)
        logits = self.head.forward(dropped)
        self._pool_cache = (x.shape, pooled)
        return logits

    def backward(self, dlogits):
        (b, length, d), pooled = self._pool_cache
        d_dropped = self.head.backward(dlogits)
        d_pooled = self.dropout.backward(d_dropped)
        d_pre = d_pooled * (1.0 - pooled**2)
        d_cls = self.pooler.backward(d_pre)
        dx = np.zeros((b, length, d), dtype=d_cls.dtype)
        dx[:, 0] = d_cls
        for layer in reversed(self.layers):
            dx = layer.backward(dx)
        self.embedding.backward(dx)

    def infer(self, ids, mask):
        """Single-document evaluation pass; returns (probs, attention maps)."""
        logits = self.forward(ids[None], mask[None], mode="eval")
        return sigmoid(logits)[0], [m[0] for m in self.attention_maps]

    def manifest_meta(self) -> dict:
        return {
            "backbone": self.backbone,
            "config": self.config.to_dict(),
            "vocab": list(self.vocab.pieces),
            "merges": [list(m) for m in self.vocab.merges],
        }

    def fingerprint(self) -> str:
        return fingerprint_meta(self.manifest_meta())

    @classmethod
    def from_manifest(cls, manifest: dict) -> "TransformerClassifier":
        config = EncoderConfig(**manifest["config"])
        vocab = subword.SubwordVocab.from_pieces(
            manifest["vocab"], manifest.get("merges", ())
        )
        return cls(config, vocab, seed=0)
