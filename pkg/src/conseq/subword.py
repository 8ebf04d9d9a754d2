"""Subword vocabulary: pair-merge learning plus greedy longest-match encoding.

Words decompose into a word-initial piece and continuation pieces carrying a
literal "##" prefix.  Learning starts from single characters and repeatedly
merges the most frequent adjacent pair (ties broken lexicographically) until
the vocabulary reaches its target size.  Every word seen during learning
encodes without UNK, and any UNK-free encoding decodes back to the original
word string.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from conseq.errors import ConfigError

RESERVED = ("[PAD]", "[UNK]", "[CLS]", "[SEP]")
PAD_ID, UNK_ID, CLS_ID, SEP_ID = range(4)
CONTINUATION = "##"


@dataclass(frozen=True)
class SubwordVocab:
    pieces: tuple[str, ...]
    piece_to_id: dict[str, int]
    merges: tuple[tuple[str, str], ...]

    def __len__(self) -> int:
        return len(self.pieces)

    def __contains__(self, piece: str) -> bool:
        return piece in self.piece_to_id

    @classmethod
    def from_pieces(cls, pieces, merges=()) -> "SubwordVocab":
        pieces = tuple(pieces)
        if pieces[: len(RESERVED)] != RESERVED:
            raise ConfigError(f"subword vocabulary must start with {RESERVED}")
        return cls(
            pieces=pieces,
            piece_to_id={p: i for i, p in enumerate(pieces)},
            merges=tuple(tuple(m) for m in merges),
        )


def _word_symbols(word: str) -> list[str]:
    return [word[0]] + [CONTINUATION + c for c in word[1:]]


def _merge_symbol(a: str, b: str) -> str:
    return a + b[len(CONTINUATION):]


def learn_subwords(docs, target_size: int) -> SubwordVocab:
    """Learn a subword vocabulary of exactly target_size pieces.

    target_size counts reserved tokens plus the character alphabet plus the
    learned merges; it must cover at least the reserved tokens and alphabet.
    """
    freq: dict[str, int] = {}
    for doc in docs:
        for token in doc.tokens:
            freq[token] = freq.get(token, 0) + 1
    if not freq:
        raise ConfigError("cannot learn subwords from an empty corpus")

    words = {word: _word_symbols(word) for word in freq}
    alphabet = sorted({symbol for symbols in words.values() for symbol in symbols})
    floor = len(RESERVED) + len(alphabet)
    if target_size < floor:
        raise ConfigError(
            f"target_size {target_size} below reserved+alphabet floor {floor}"
        )

    pieces = list(RESERVED) + alphabet
    merges: list[tuple[str, str]] = []
    while len(pieces) < target_size:
        pair_counts: dict[tuple[str, str], int] = {}
        for word, symbols in words.items():
            weight = freq[word]
            for a, b in zip(symbols, symbols[1:]):
                pair_counts[(a, b)] = pair_counts.get((a, b), 0) + weight
        if not pair_counts:
            break
        best = min(pair_counts, key=lambda pair: (-pair_counts[pair], pair))
        merged = _merge_symbol(*best)
        for word, symbols in words.items():
            out = []
            i = 0
            while i < len(symbols):
                if i + 1 < len(symbols) and (symbols[i], symbols[i + 1]) == best:
                    out.append(merged)
                    i += 2
                else:
                    out.append(symbols[i])
                    i += 1
            words[word] = out
        merges.append(best)
        pieces.append(merged)
    return SubwordVocab.from_pieces(pieces, merges)


def encode_word(word: str, vocab: SubwordVocab) -> list[int]:
    """Greedy longest-match from the left; unmatched residue becomes one UNK."""
    ids: list[int] = []
    start = 0
    while start < len(word):
        end = len(word)
        found = None
        while end > start:
            piece = word[start:end]
            if start > 0:
                piece = CONTINUATION + piece
            if piece in vocab:
                found = piece
                break
            end -= 1
        if found is None:
            ids.append(UNK_ID)
            break
        ids.append(vocab.piece_to_id[found])
        start = end
    return ids


def subword_encode(tokens, vocab: SubwordVocab, max_len: int = 256):
    """Encode cleaned word tokens as [CLS] pieces... [SEP] with padding.

    Truncation keeps the sequence head while preserving both CLS and SEP;
    the mask is 1 over real pieces (including CLS and SEP).
    """
    if max_len < 2:
        raise ConfigError(f"max_len must be >= 2 to fit CLS and SEP, got {max_len}")
    body: list[int] = []
    for token in tokens:
        body.extend(encode_word(token, vocab))
    body = body[: max_len - 2]
    framed = [CLS_ID, *body, SEP_ID]
    ids = np.full(max_len, PAD_ID, dtype=np.int64)
    mask = np.zeros(max_len, dtype=np.float64)
    ids[: len(framed)] = framed
    mask[: len(framed)] = 1.0
    return ids, mask


def subword_decode(ids, vocab: SubwordVocab) -> str:
    """Rebuild the word string(s); word-initial pieces open a new word."""
    words: list[str] = []
    for i in ids:
        i = int(i)
        if i < len(RESERVED):
            continue
        piece = vocab.pieces[i]
        if piece.startswith(CONTINUATION):
            if not words:
                words.append("")
            words[-1] += piece[len(CONTINUATION):]
        else:
            words.append(piece)
    return " ".join(words)


def save_vocab(vocab: SubwordVocab, path: str | Path) -> None:
    """One piece per line, reserved tokens first."""
    Path(path).write_text("\n".join(vocab.pieces) + "\n")


def load_vocab(path: str | Path) -> SubwordVocab:
    pieces = [line for line in Path(path).read_text().splitlines() if line]
    return SubwordVocab.from_pieces(pieces)
