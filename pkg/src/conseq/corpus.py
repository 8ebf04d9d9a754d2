"""CWE corpus pipeline: parsing, cleaning, label mapping, encoding, splitting.

The input is a CSV export with header ``cwe_id,name,description,consequences``
where the consequences cell holds scope strings joined by ``::``.  Entries are
cleaned into lowercase tokens grouped by sentence, consequence scopes are
consolidated into the five target labels, and the result can be encoded either
as a flat padded sequence or as a sentence/word grid.
"""

from __future__ import annotations

import csv
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from conseq.errors import ConfigError, SchemaError
from conseq.labels import LABELS, NAMED_SCOPES, NUM_LABELS

logger = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("cwe_id", "name", "description", "consequences")
SCOPE_DELIMITER = "::"

PAD_TOKEN = "[PAD]"
UNK_TOKEN = "[UNK]"
PAD_ID = 0
UNK_ID = 1

_DATA_DIR = Path(__file__).parent / "data"
_NON_ALNUM = re.compile(r"[^a-z0-9]+")
_SENTENCE_END = re.compile(r"[.!?](?:\s+|$)")


def fixture_path() -> Path:
    """Path of the bundled CWE fixture CSV."""
    return _DATA_DIR / "cwe_fixture.csv"


def load_stopwords() -> frozenset[str]:
    """The frozen English stopword list bundled with the package."""
    words = (_DATA_DIR / "stopwords.txt").read_text().split()
    return frozenset(words)


STOPWORDS = load_stopwords()


@dataclass(frozen=True)
class RawEntry:
    """One CWE row as parsed from the CSV, before any filtering."""

    cwe_id: str
    name: str
    description: str
    consequence_scopes: tuple[str, ...]


@dataclass(frozen=True)
class LabelVector:
    """The five consequence flags, in fixed order."""

    availability: bool = False
    access_control: bool = False
    confidentiality: bool = False
    integrity: bool = False
    other: bool = False

    def to_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in LABELS], dtype=np.float64)

    @classmethod
    def from_array(cls, arr) -> "LabelVector":
        values = [bool(round(float(v))) for v in arr]
        if len(values) != NUM_LABELS:
            raise ValueError(f"expected {NUM_LABELS} flags, got {len(values)}")
        return cls(*values)

    def any(self) -> bool:
        return any(getattr(self, name) for name in LABELS)


@dataclass(frozen=True)
class Document:
    """A cleaned CWE entry: flat tokens, sentence structure, label flags."""

    id: str
    tokens: tuple[str, ...]
    sentences: tuple[tuple[str, ...], ...]
    labels: LabelVector


@dataclass(frozen=True)
class Vocabulary:
    """Token/index bijection with reserved PAD=0 and UNK=1 entries."""

    token_to_id: dict[str, int]
    id_to_token: tuple[str, ...]
    min_freq: int

    def __len__(self) -> int:
        return len(self.id_to_token)

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.80
    validation_fraction: float = 0.15
    test_fraction: float = 0.05
    seed: int = 7

    def fractions(self) -> tuple[float, float, float]:
        return (self.train_fraction, self.validation_fraction, self.test_fraction)

    def validate(self) -> None:
        fracs = self.fractions()
        if any(f <= 0 for f in fracs):
            raise ConfigError(f"split fractions must be positive, got {fracs}")
        if abs(sum(fracs) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must sum to 1, got {sum(fracs)}")


@dataclass
class IngestStats:
    """Row accounting for one ingest run."""

    rows: int = 0
    skipped_empty_description: int = 0
    dropped_no_labels: int = 0
    dropped_empty_after_cleaning: int = 0
    documents: int = 0
    label_counts: tuple[int, ...] = field(default=(0,) * NUM_LABELS)
    label_total: int = 0


def parse_cwe(path: str | Path) -> list[RawEntry]:
    """Parse the CWE CSV export into raw entries.

    Rows with an empty description are skipped (counted in a warning); the
    consequences cell is split on ``::`` into individual scope strings.
    """
    path = Path(path)
    try:
        handle = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise IOError(f"cannot read CWE file {path}: {exc}") from exc

    entries: list[RawEntry] = []
    skipped = 0
    seen_ids: set[str] = set()
    with handle:
        reader = csv.DictReader(handle)
        header = reader.fieldnames or []
        for column in REQUIRED_COLUMNS:
            if column not in header:
                raise SchemaError(f"missing required column {column!r} in {path}")
        for row_number, row in enumerate(reader, start=2):
            description = (row["description"] or "").strip()
            if not description:
                skipped += 1
                continue
            cwe_id = (row["cwe_id"] or "").strip()
            if not cwe_id:
                raise SchemaError(f"{path}:{row_number}: empty cwe_id")
            if cwe_id in seen_ids:
                raise SchemaError(f"{path}:{row_number}: duplicate cwe_id {cwe_id!r}")
            seen_ids.add(cwe_id)
            scopes = tuple(
                s.strip() for s in (row["consequences"] or "").split(SCOPE_DELIMITER) if s.strip()
            )
            entries.append(
                RawEntry(
                    cwe_id=cwe_id,
                    name=(row["name"] or "").strip(),
                    description=description,
                    consequence_scopes=scopes,
                )
            )
    if skipped:
        logger.warning("skipped %d rows with empty description in %s", skipped, path)
    return entries


def map_consequences(scopes) -> LabelVector:
    """Consolidate scope strings into the five target flags.

    The four named categories match case-insensitively; every other non-empty
    scope sets ``other``.  Duplicates and ordering are irrelevant.
    """
    flags = dict.fromkeys(LABELS, False)
    for scope in scopes:
        key = scope.strip().lower()
        if not key:
            continue
        flags[NAMED_SCOPES.get(key, "other")] = True
    return LabelVector(**flags)


def clean_text(raw: str, stopwords: frozenset[str] = STOPWORDS) -> list[str]:
    """Lowercase, strip punctuation and symbols, drop stopwords.

    Tokenization is on whitespace after every non-alphanumeric character has
    been replaced by a space, so token order is preserved.
    """
    if not stopwords:
        raise ConfigError("stopword set must be non-empty")
    text = _NON_ALNUM.sub(" ", raw.lower())
    return [token for token in text.split() if token not in stopwords]


def split_sentences(raw: str) -> list[str]:
    """Split on '.', '!' or '?' followed by whitespace or end of text.

    Empty fragments are dropped; text without a terminator is one sentence.
    """
    fragments = _SENTENCE_END.split(raw)
    return [fragment.strip() for fragment in fragments if fragment.strip()]


def build_document(entry: RawEntry) -> Document | None:
    """Clean one entry into a Document; None if it is filtered out.

    Filtered: all-false label vector, or no tokens survive cleaning.
    """
    labels = map_consequences(entry.consequence_scopes)
    if not labels.any():
        return None
    sentences = tuple(
        tuple(tokens)
        for tokens in (clean_text(s) for s in split_sentences(entry.description))
        if tokens
    )
    tokens = tuple(token for sentence in sentences for token in sentence)
    if not tokens:
        return None
    return Document(id=entry.cwe_id, tokens=tokens, sentences=sentences, labels=labels)


def build_documents(entries) -> tuple[list[Document], IngestStats]:
    """Filter and clean raw entries into training-ready documents."""
    stats = IngestStats(rows=len(entries))
    documents = []
    for entry in entries:
        labels = map_consequences(entry.consequence_scopes)
        if not labels.any():
            stats.dropped_no_labels += 1
            continue
        doc = build_document(entry)
        if doc is None:
            stats.dropped_empty_after_cleaning += 1
            continue
        documents.append(doc)
    stats.documents = len(documents)
    counts, total = label_histogram(documents)
    stats.label_counts = counts
    stats.label_total = total
    return documents, stats


def ingest(path: str | Path) -> tuple[list[Document], IngestStats]:
    """Full ingest: parse the CSV, clean and filter into documents."""
    entries = parse_cwe(path)
    return build_documents(entries)


def label_histogram(docs) -> tuple[tuple[int, ...], int]:
    """Per-label counts over the documents plus their sum.

    This counts set flags, not documents, so the total exceeds len(docs)
    whenever entries carry several labels.
    """
    counts = [0] * NUM_LABELS
    for doc in docs:
        for i, name in enumerate(LABELS):
            if getattr(doc.labels, name):
                counts[i] += 1
    return tuple(counts), sum(counts)


def build_vocab(docs, min_freq: int = 1) -> Vocabulary:
    """Frequency vocabulary over the given (training) documents.

    Tokens with corpus frequency >= min_freq get ids starting at 2, assigned
    in descending frequency with lexicographic tie-breaking.
    """
    if not docs:
        raise ConfigError("cannot build a vocabulary from an empty document list")
    freq: dict[str, int] = {}
    for doc in docs:
        for token in doc.tokens:
            freq[token] = freq.get(token, 0) + 1
    kept = sorted(
        (token for token, n in freq.items() if n >= min_freq),
        key=lambda t: (-freq[t], t),
    )
    id_to_token = (PAD_TOKEN, UNK_TOKEN, *kept)
    token_to_id = {token: i for i, token in enumerate(id_to_token)}
    return Vocabulary(token_to_id=token_to_id, id_to_token=id_to_token, min_freq=min_freq)


def encode_flat(doc: Document, vocab: Vocabulary, max_len: int = 256):
    """Encode tokens as a fixed-length id sequence plus a 0/1 mask.

    Unknown tokens map to UNK; long sequences are truncated at the tail and
    short ones right-padded with PAD.
    """
    if max_len < 1:
        raise ConfigError(f"max_len must be >= 1, got {max_len}")
    ids = np.full(max_len, PAD_ID, dtype=np.int64)
    mask = np.zeros(max_len, dtype=np.float64)
    kept = doc.tokens[:max_len]
    for i, token in enumerate(kept):
        ids[i] = vocab.lookup(token)
        mask[i] = 1.0
    return ids, mask


def encode_hierarchical(
    doc: Document,
    vocab: Vocabulary,
    max_sentences: int = 16,
    max_words: int = 32,
):
    """Encode the sentence structure as a padded (sentences x words) grid.

    Per-sentence padding/truncation mirrors encode_flat; excess sentences are
    truncated at the tail and missing sentences become all-PAD rows.
    """
    if max_sentences < 1 or max_words < 1:
        raise ConfigError(
            f"grid dimensions must be >= 1, got {max_sentences}x{max_words}"
        )
    ids = np.full((max_sentences, max_words), PAD_ID, dtype=np.int64)
    mask = np.zeros((max_sentences, max_words), dtype=np.float64)
    for s, sentence in enumerate(doc.sentences[:max_sentences]):
        for w, token in enumerate(sentence[:max_words]):
            ids[s, w] = vocab.lookup(token)
            mask[s, w] = 1.0
    return ids, mask


def subset_sizes(n: int, fractions) -> tuple[int, ...]:
    """Apportion n items to the fractions by largest remainder.

    Floors are assigned first; leftover items go to the subsets with the
    largest fractional remainders (earlier subset wins ties).
    """
    quotas = [n * f for f in fractions]
    base = [int(np.floor(q)) for q in quotas]
    leftover = n - sum(base)
    order = sorted(range(len(fractions)), key=lambda j: (-(quotas[j] - base[j]), j))
    for j in order[:leftover]:
        base[j] += 1
    return tuple(base)


def stratified_split(docs, spec: SplitSpec):
    """Iterative multi-label stratification into train/validation/test.

    Three deterministic phases: (1) greedy placement, rarest remaining label
    first, each document going to the subset with the greatest outstanding
    demand for that label; (2) moves to make the subset sizes exactly match
    the largest-remainder apportionment; (3) swap refinement between subsets
    until no exchange of two documents brings the per-label counts closer to
    their proportional targets.  Identical seeds give identical partitions.
    """
    spec.validate()
    if not docs:
        raise ConfigError("cannot split an empty document list")
    n = len(docs)
    n_subsets = 3
    fractions = spec.fractions()
    sizes = subset_sizes(n, fractions)
    if any(size == 0 for size in sizes):
        raise ConfigError(f"split of {n} documents yields an empty subset: {sizes}")

    labels = np.array([doc.labels.to_array() for doc in docs], dtype=np.int64)
    rng = np.random.default_rng(spec.seed)
    # Seeded processing order; everything downstream breaks ties deterministically.
    order = rng.permutation(n)
    rank = np.empty(n, dtype=np.int64)
    rank[order] = np.arange(n)

    totals = labels.sum(axis=0)
    desired = [[totals[l] * f for l in range(NUM_LABELS)] for f in fractions]
    budget = [n * f for f in fractions]  # soft budgets; sizes are fixed in phase 2
    assigned = np.full(n, -1, dtype=np.int64)
    remaining = set(range(n))

    while remaining:
        remaining_list = sorted(remaining)
        per_label = labels[remaining_list].sum(axis=0)
        active = [l for l in range(NUM_LABELS) if per_label[l] > 0]
        if active:
            rarest = min(active, key=lambda l: (per_label[l], l))
            batch = [i for i in remaining_list if labels[i, rarest] > 0]
        else:
            rarest = None
            batch = remaining_list  # label-free documents: place by budget
        batch.sort(key=lambda i: rank[i])
        for i in batch:
            if rarest is not None:
                j = min(range(n_subsets), key=lambda j: (-desired[j][rarest], -budget[j], j))
            else:
                j = min(range(n_subsets), key=lambda j: (-budget[j], j))
            assigned[i] = j
            budget[j] -= 1
            for l in range(NUM_LABELS):
                if labels[i, l]:
                    desired[j][l] -= 1
            remaining.discard(i)

    # Integer per-label targets for each subset, apportioned like the sizes.
    target = np.zeros((n_subsets, NUM_LABELS), dtype=np.int64)
    for l in range(NUM_LABELS):
        target[:, l] = subset_sizes(int(totals[l]), fractions)

    def label_error():
        counts = np.stack([labels[assigned == j].sum(axis=0) for j in range(n_subsets)])
        return counts - target

    # Phase 2: enforce exact sizes, moving the documents that hurt least.
    while True:
        counts = [int((assigned == j).sum()) for j in range(n_subsets)]
        over = [j for j in range(n_subsets) if counts[j] > sizes[j]]
        under = [j for j in range(n_subsets) if counts[j] < sizes[j]]
        if not over:
            break
        j_from, j_to = over[0], under[0]
        err = label_error()
        candidates = sorted(np.flatnonzero(assigned == j_from), key=lambda i: rank[i])
        best = min(
            candidates,
            key=lambda i: (
                np.abs(err[j_from] - labels[i]).sum() + np.abs(err[j_to] + labels[i]).sum(),
                rank[i],
            ),
        )
        assigned[best] = j_to

    # Phase 3: swap documents between subsets while that reduces the total
    # per-label count error.  Swaps act on label-combination classes, so only
    # a handful of exchange types need to be examined per round.
    while True:
        err = label_error()
        cost = int(np.abs(err).sum())
        if cost == 0:
            break
        combos: dict[tuple[int, tuple[int, ...]], list[int]] = {}
        for i in range(n):
            combos.setdefault((int(assigned[i]), tuple(labels[i])), []).append(i)
        for members in combos.values():
            members.sort(key=lambda i: rank[i])
        best_cost = cost
        best_swap = None
        keys = sorted(combos)
        for j1, u in keys:
            for j2, v in keys:
                if j1 >= j2 or u == v:
                    continue
                du = np.array(u) - np.array(v)
                rest = [j for j in range(n_subsets) if j not in (j1, j2)]
                new_cost = (
                    np.abs(err[j1] - du).sum()
                    + np.abs(err[j2] + du).sum()
                    + sum(np.abs(err[j]).sum() for j in rest)
                )
                if new_cost < best_cost:
                    best_cost = int(new_cost)
                    best_swap = (j1, u, j2, v)
        if best_swap is None:
            break
        j1, u, j2, v = best_swap
        a = combos[(j1, u)][0]
        b = combos[(j2, v)][0]
        assigned[a], assigned[b] = j2, j1

    return tuple(
        [docs[i] for i in range(n) if assigned[i] == j] for j in range(n_subsets)
    )


def write_jsonl(docs, path: str | Path) -> None:
    """Write documents as JSON lines: id, tokens, sentences, labels (0/1 x5)."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as handle:
        for doc in docs:
            record = {
                "id": doc.id,
                "tokens": list(doc.tokens),
                "sentences": [list(s) for s in doc.sentences],
                "labels": [int(getattr(doc.labels, name)) for name in LABELS],
            }
            handle.write(json.dumps(record, sort_keys=True) + "\n")


def read_jsonl(path: str | Path) -> list[Document]:
    """Read documents written by write_jsonl."""
    docs = []
    with Path(path).open(encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                doc = Document(
                    id=record["id"],
                    tokens=tuple(record["tokens"]),
                    sentences=tuple(tuple(s) for s in record["sentences"]),
                    labels=LabelVector.from_array(record["labels"]),
                )
            except (KeyError, ValueError, TypeError) as exc:
                raise SchemaError(f"{path}:{line_number}: bad document record: {exc}") from exc
            docs.append(doc)
    return docs


def write_split_manifest(subsets, spec: SplitSpec, path: str | Path) -> None:
    """Persist the split as subset-name -> document ids, plus the seed used."""
    names = ("train", "validation", "test")
    manifest = {
        "seed": spec.seed,
        "fractions": list(spec.fractions()),
        "subsets": {name: [doc.id for doc in subset] for name, subset in zip(names, subsets)},
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_split_manifest(path: str | Path) -> dict:
    try:
        manifest = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"bad split manifest {path}: {exc}") from exc
    if "subsets" not in manifest or "seed" not in manifest:
        raise SchemaError(f"split manifest {path} lacks 'subsets' or 'seed'")
    return manifest


def select_subset(docs, manifest: dict, name: str) -> list[Document]:
    """Resolve one manifest subset back to documents, preserving manifest order."""
    if name not in manifest["subsets"]:
        raise ConfigError(f"unknown subset {name!r}; have {sorted(manifest['subsets'])}")
    by_id = {doc.id: doc for doc in docs}
    missing = [i for i in manifest["subsets"][name] if i not in by_id]
    if missing:
        raise SchemaError(f"subset {name!r} references unknown document ids: {missing[:5]}")
    return [by_id[i] for i in manifest["subsets"][name]]
