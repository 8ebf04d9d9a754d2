import numpy as np
import pytest

from conseq import corpus


@pytest.fixture(scope="session")
def fixture_docs():
    """Documents from the bundled CWE fixture (ingested once per session)."""
    docs, stats = corpus.ingest(corpus.fixture_path())
    return docs


@pytest.fixture(scope="session")
def default_split(fixture_docs):
    return corpus.stratified_split(fixture_docs, corpus.SplitSpec())


@pytest.fixture()
def tiny_docs():
    """A handful of hand-built documents for vocabulary/model plumbing."""
    rng = np.random.default_rng(99)
    words = ["crash", "leak", "bypass", "tamper", "audit", "memory", "service",
             "data", "input", "buffer"]
    docs = []
    for i in range(20):
        n_sent = int(rng.integers(1, 4))
        sentences = []
        for _ in range(n_sent):
            k = int(rng.integers(2, 5))
            sentences.append(tuple(str(words[j]) for j in rng.integers(0, len(words), k)))
        flags = rng.random(5) < 0.4
        if not flags.any():
            flags[int(rng.integers(0, 5))] = True
        docs.append(
            corpus.Document(
                id=f"T-{i}",
                tokens=tuple(t for s in sentences for t in s),
                sentences=tuple(sentences),
                labels=corpus.LabelVector(*[bool(f) for f in flags]),
            )
        )
    return docs
