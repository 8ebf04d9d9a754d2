"""Hierarchical attention network over sentence/word grids.

Per sentence: embed words, run a bidirectional GRU, pool with word-level
additive attention.  Across sentences: another bidirectional GRU, sentence
attention, then a dense layer to five independent sigmoid outputs.  Absent
(all-PAD) sentences are excluded from sentence attention entirely.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np

from conseq import corpus
from conseq.errors import ConfigError, InvalidInputError
from conseq.labels import NUM_LABELS
from conseq.nn import AdditiveAttention, BiGRU, Dropout, Embedding, Linear, sigmoid


@dataclass(frozen=True)
class HanConfig:
    vocab_size: int
    embed_dim: int = 100
    gru_units: int = 64
    attention_dim: int = 64
    max_sentences: int = 16
    max_words: int = 32
    num_labels: int = NUM_LABELS
    dropout_p: float = 0.0
    dtype: str = "float64"

    def __post_init__(self):
        for name in ("vocab_size", "embed_dim", "gru_units", "attention_dim",
                     "max_sentences", "max_words", "num_labels"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"HanConfig.{name} must be positive, got {getattr(self, name)}")
        if self.num_labels != NUM_LABELS:
            raise ConfigError(f"HanConfig.num_labels must be {NUM_LABELS}")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError(f"HanConfig.dtype must be float64 or float32, got {self.dtype!r}")

    def to_dict(self) -> dict:
        return asdict(self)


class HanModel:
    backbone = "han"

    def __init__(self, config: HanConfig, vocab: corpus.Vocabulary, seed: int = 0):
        self.config = config
        self.vocab = vocab
        dtype = np.dtype(config.dtype)
        rng = np.random.default_rng(seed)
        d, h, a = config.embed_dim, config.gru_units, config.attention_dim
        self.embedding = Embedding(config.vocab_size, d, rng, "embedding", dtype)
        self.word_bigru = BiGRU(d, h, rng, "word_gru", dtype)
        self.word_attention = AdditiveAttention(2 * h, a, rng, "word_attention", dtype)
        self.sentence_bigru = BiGRU(2 * h, h, rng, "sentence_gru", dtype)
        self.sentence_attention = AdditiveAttention(2 * h, a, rng, "sentence_attention", dtype)
        self.dropout = Dropout(config.dropout_p)
        self.head = Linear(2 * h, config.num_labels, rng, "head", dtype)
        self._shape = None
        self.word_weights = None
        self.sentence_weights = None

    def parameter_groups(self) -> dict[str, list]:
        return {
            "embedding": self.embedding.parameters(),
            "word_gru": self.word_bigru.parameters(),
            "word_attention": self.word_attention.parameters(),
            "sentence_gru": self.sentence_bigru.parameters(),
            "sentence_attention": self.sentence_attention.parameters(),
            "head": self.head.parameters(),
        }

    def parameters(self):
        return [p for group in self.parameter_groups().values() for p in group]

    def encode_documents(self, docs):
        grids = []
        masks = []
        for doc in docs:
            ids, mask = corpus.encode_hierarchical(
                doc, self.vocab, self.config.max_sentences, self.config.max_words
            )
            grids.append(ids)
            masks.append(mask)
        return np.stack(grids), np.stack(masks)

    def forward(self, grids, masks, mode: str = "eval", rng=None):
        """grids, masks: (B, S, W).  Returns logits (B, num_labels)."""
        if grids.ndim == 2:
            grids = grids[None]
            masks = masks[None]
        b, s, w = grids.shape
        masks = masks.astype(np.dtype(self.config.dtype), copy=False)
        sentence_mask = (masks.sum(axis=2) > 0).astype(masks.dtype)
        if not sentence_mask.any(axis=1).all():
            raise InvalidInputError("document with zero real tokens cannot be classified")

        embedded = self.embedding.forward(grids)                      # (B,S,W,D)
        flat = embedded.reshape(b * s, w, -1)
        word_mask = masks.reshape(b * s, w)
        word_states = self.word_bigru.forward(flat, word_mask)       # (B*S,W,2H)
        sentence_vecs, word_weights = self.word_attention.forward(
            word_states, word_mask, empty="zeros"
        )
        sentence_vecs = sentence_vecs.reshape(b, s, -1)
        sentence_states = self.sentence_bigru.forward(sentence_vecs, sentence_mask)
        doc_vec, sentence_weights = self.sentence_attention.forward(
            sentence_states, sentence_mask, empty="error"
        )
        doc_vec = self.dropout.forward(doc_vec, mode, rng)
        logits = self.head.forward(doc_vec)

        self._shape = (b, s, w)
        self.word_weights = word_weights.reshape(b, s, w)
        self.sentence_weights = sentence_weights
        return logits

    def backward(self, dlogits):
        b, s, w = self._shape
        d_doc = self.head.backward(dlogits)
        d_doc = self.dropout.backward(d_doc)
        d_sentence_states = self.sentence_attention.backward(d_doc)
        d_sentence_vecs = self.sentence_bigru.backward(d_sentence_states)
        d_word_states = self.word_attention.backward(d_sentence_vecs.reshape(b * s, -1))
        d_embedded = self.word_bigru.backward(d_word_states)
        self.embedding.backward(d_embedded.reshape(b, s, w, -1))

    def infer(self, grid, mask):
        """Single-document evaluation pass.

        Returns (probs, word_weights (S, W), sentence_weights (S,)).
        """
        logits = self.forward(grid[None], mask[None], mode="eval")
        return sigmoid(logits)[0], self.word_weights[0], self.sentence_weights[0]

    def attention_report(self, doc: corpus.Document) -> dict:
        """Inspection JSON: sentence weights plus per-sentence word weights."""
        grid, mask = corpus.encode_hierarchical(
            doc, self.vocab, self.config.max_sentences, self.config.max_words
        )
        probs, word_w, sent_w = self.infer(grid, mask)
        sentences = []
        for s, sentence in enumerate(doc.sentences[: self.config.max_sentences]):
            words = list(sentence[: self.config.max_words])
            sentences.append(
                {
                    "sentence_weight": float(sent_w[s]),
                    "words": words,
                    "word_weights": [float(x) for x in word_w[s, : len(words)]],
                }
            )
        return {"id": doc.id, "probs": [float(p) for p in probs], "sentences": sentences}

    def manifest_meta(self) -> dict:
        return {
            "backbone": self.backbone,
            "config": self.config.to_dict(),
            "vocab": list(self.vocab.id_to_token),
            "vocab_min_freq": self.vocab.min_freq,
        }

    def fingerprint(self) -> str:
        return fingerprint_meta(self.manifest_meta())

    @classmethod
    def from_manifest(cls, manifest: dict) -> "HanModel":
        config = HanConfig(**manifest["config"])
        tokens = tuple(manifest["vocab"])
        vocab = corpus.Vocabulary(
            token_to_id={t: i for i, t in enumerate(tokens)},
            id_to_token=tokens,
            min_freq=manifest.get("vocab_min_freq", 1),
        )
        return cls(config, vocab, seed=0)


def fingerprint_meta(meta: dict) -> str:
    payload = {"backbone": meta["backbone"], "config": meta["config"], "vocab": meta["vocab"]}
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()
