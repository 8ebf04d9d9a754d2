"""Corpus pipeline: parsing, cleaning, label mapping, encoding, splitting."""

import logging

import numpy as np
import pytest

from conseq import corpus
from conseq.errors import ConfigError, SchemaError
THREE_ROWS = """cwe_id,name,description,consequences
CWE-1,Alpha,"The product crashes on malformed input.",Availability
CWE-2,Beta,"Credentials may leak to remote peers.",Confidentiality::Integrity
CWE-3,Gamma,"Placeholder entry.",
"""


def write_csv(tmp_path, text, name="cwe.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestParseCwe:
    def test_three_row_fixture(self, tmp_path):
        entries = corpus.parse_cwe(write_csv(tmp_path, THREE_ROWS))
        assert len(entries) == 3
        assert entries[0].cwe_id == "CWE-1"
        assert entries[1].consequence_scopes == ("Confidentiality", "Integrity")
        assert entries[2].consequence_scopes == ()

    def test_bundled_fixture_row_count(self, tmp_path):
        entries = corpus.parse_cwe(corpus.fixture_path())
        assert len(entries) == 1016

    def test_header_only_file(self, tmp_path):
        path = write_csv(tmp_path, "cwe_id,name,description,consequences\n")
        assert corpus.parse_cwe(path) == []

    def test_missing_column(self, tmp_path):
        path = write_csv(tmp_path, "cwe_id,name,text\nCWE-1,x,y\n")
        with pytest.raises(SchemaError, match="description"):
            corpus.parse_cwe(path)

    def test_unreadable_file(self, tmp_path):
        with pytest.raises(OSError):
            corpus.parse_cwe(tmp_path / "absent.csv")

    def test_empty_description_skipped_with_warning(self, tmp_path, caplog):
        text = THREE_ROWS + 'CWE-4,Delta,"   ",Integrity\n'
        with caplog.at_level(logging.WARNING):
            entries = corpus.parse_cwe(write_csv(tmp_path, text))
        assert len(entries) == 3
        assert "skipped 1 rows" in caplog.text

    def test_duplicate_id_rejected(self, tmp_path):
        text = THREE_ROWS + 'CWE-1,Dup,"Another.",Integrity\n'
        with pytest.raises(SchemaError, match="duplicate"):
            corpus.parse_cwe(write_csv(tmp_path, text))


class TestMapConsequences:
    def test_named_categories(self):
        v = corpus.map_consequences(["Confidentiality", "Integrity"])
        assert (v.availability, v.access_control, v.confidentiality, v.integrity, v.other) == (
            False, False, True, True, False,
        )

    def test_unnamed_scope_goes_to_other(self):
        v = corpus.map_consequences(["Non-Repudiation"])
        assert v == corpus.LabelVector(other=True)

    def test_empty_input(self):
        assert corpus.map_consequences([]) == corpus.LabelVector()
        assert not corpus.map_consequences([]).any()

    def test_case_insensitive(self):
        assert corpus.map_consequences(["aVaIlAbIlItY"]) == corpus.LabelVector(availability=True)

    def test_idempotent_under_duplication_and_permutation(self):
        rng = np.random.default_rng(3)
        pool = ["Availability", "Access Control", "Confidentiality", "Integrity",
                "Non-Repudiation", "Accountability", "Authentication"]
        for _ in range(100):
            scopes = [pool[i] for i in rng.integers(0, len(pool), rng.integers(1, 6))]
            base = corpus.map_consequences(scopes)
            assert corpus.map_consequences(scopes + scopes) == base
            shuffled = list(scopes)
            rng.shuffle(shuffled)
            assert corpus.map_consequences(shuffled) == base


class TestCleanText:
    def test_stopwords_punctuation_lowercase(self):
        assert corpus.clean_text("The product does NOT validate input.") == [
            "product", "validate", "input",
        ]

    def test_empty_string(self):
        assert corpus.clean_text("") == []

    def test_all_stopwords(self):
        assert corpus.clean_text("a the of") == []

    def test_idempotent(self):
        rng = np.random.default_rng(4)
        samples = [
            "The server MAY crash, causing denial-of-service!",
            "Attacker-controlled input;;; bypasses ALL checks?",
            "you're reading this (twice) -- right now.",
        ]
        for raw in samples:
            once = corpus.clean_text(raw)
            assert corpus.clean_text(" ".join(once)) == once

    def test_empty_stopword_set_rejected(self):
        with pytest.raises(ConfigError):
            corpus.clean_text("anything", frozenset())


class TestSplitSentences:
    def test_two_terminated(self):
        assert corpus.split_sentences("A fails. B leaks data.") == ["A fails", "B leaks data"]

    def test_no_terminator(self):
        assert corpus.split_sentences("no terminator") == ["no terminator"]

    def test_trailing_terminator(self):
        assert corpus.split_sentences("Ends now.") == ["Ends now"]

    def test_bang_and_question(self):
        assert corpus.split_sentences("Stop! Why? Go.") == ["Stop", "Why", "Go"]


class TestDocuments:
    def test_sentence_token_roundtrip(self, fixture_docs):
        for doc in fixture_docs:
            flat = tuple(t for s in doc.sentences for t in s)
            assert flat == doc.tokens

    def test_filtering_counts(self):
        entries = corpus.parse_cwe(corpus.fixture_path())
        docs, stats = corpus.build_documents(entries)
        assert stats.rows == 1016
        assert stats.documents == 895
        assert stats.dropped_no_labels == 121
        assert stats.dropped_empty_after_cleaning == 0

    def test_tokens_are_clean(self, fixture_docs):
        for doc in fixture_docs[:50]:
            for token in doc.tokens:
                assert token == token.lower()
                assert token.isalnum()
                assert token not in corpus.STOPWORDS


class TestLabelHistogram:
    def test_bundled_fixture_counts(self, fixture_docs):
        counts, total = corpus.label_histogram(fixture_docs)
        assert counts == (247, 255, 403, 439, 282)
        assert total == 1626

    def test_empty_corpus(self):
        assert corpus.label_histogram([]) == ((0, 0, 0, 0, 0), 0)

    def test_all_flags_single_doc(self):
        doc = corpus.Document("x", ("a",), (("a",),), corpus.LabelVector(*[True] * 5))
        assert corpus.label_histogram([doc]) == ((1, 1, 1, 1, 1), 5)

    def test_total_is_sum_of_counts(self, tiny_docs):
        counts, total = corpus.label_histogram(tiny_docs)
        assert total == sum(counts)


class TestVocabulary:
    def _docs(self, token_lists):
        return [
            corpus.Document(str(i), tuple(ts), (tuple(ts),), corpus.LabelVector(True))
            for i, ts in enumerate(token_lists)
        ]

    def test_threshold_filter(self):
        vocab = corpus.build_vocab(self._docs([["a", "a", "a", "b"]]), min_freq=2)
        assert vocab.token_to_id == {"[PAD]": 0, "[UNK]": 1, "a": 2}

    def test_min_freq_one(self):
        vocab = corpus.build_vocab(self._docs([["x", "y"]]), min_freq=1)
        assert len(vocab) == 4

    def test_lexicographic_ties(self):
        vocab = corpus.build_vocab(self._docs([["b", "a"]]), min_freq=1)
        assert vocab.token_to_id["a"] == 2
        assert vocab.token_to_id["b"] == 3

    def test_frequency_order(self):
        vocab = corpus.build_vocab(self._docs([["z", "z", "z", "m", "m", "q"]]), min_freq=1)
        assert vocab.token_to_id["z"] == 2
        assert vocab.token_to_id["m"] == 3
        assert vocab.token_to_id["q"] == 4

    def test_empty_docs_rejected(self):
        with pytest.raises(ConfigError):
            corpus.build_vocab([], min_freq=1)

    def test_bijection(self, tiny_docs):
        vocab = corpus.build_vocab(tiny_docs, min_freq=1)
        for token, idx in vocab.token_to_id.items():
            assert vocab.id_to_token[idx] == token
        assert sorted(vocab.token_to_id.values()) == list(range(len(vocab)))


class TestEncodeFlat:
    def _vocab(self):
        docs = [corpus.Document("0", ("aa", "bb", "cc"), (("aa", "bb", "cc"),),
                                corpus.LabelVector(True))]
        return corpus.build_vocab(docs, min_freq=1)

    def test_padding(self):
        vocab = self._vocab()
        doc = corpus.Document("d", ("aa", "bb", "cc"), (("aa", "bb", "cc"),),
                              corpus.LabelVector(True))
        ids, mask = corpus.encode_flat(doc, vocab, max_len=5)
        assert ids.tolist() == [vocab.lookup("aa"), vocab.lookup("bb"), vocab.lookup("cc"), 0, 0]
        assert mask.tolist() == [1, 1, 1, 0, 0]

    def test_truncation(self):
        vocab = self._vocab()
        doc = corpus.Document("d", ("aa",) * 300, (("aa",) * 300,), corpus.LabelVector(True))
        ids, mask = corpus.encode_flat(doc, vocab, max_len=256)
        assert len(ids) == 256
        assert mask.sum() == 256

    def test_unknown_token(self):
        vocab = self._vocab()
        doc = corpus.Document("d", ("zz",), (("zz",),), corpus.LabelVector(True))
        ids, mask = corpus.encode_flat(doc, vocab, max_len=3)
        assert ids[0] == corpus.UNK_ID

    def test_length_and_mask_properties(self, fixture_docs):
        vocab = corpus.build_vocab(fixture_docs[:100], min_freq=1)
        for doc in fixture_docs[:100]:
            for max_len in (4, 16, 64):
                ids, mask = corpus.encode_flat(doc, vocab, max_len=max_len)
                assert len(ids) == max_len == len(mask)
                assert mask.sum() == min(len(doc.tokens), max_len)


class TestEncodeHierarchical:
    def test_grid_padding(self, tiny_docs):
        vocab = corpus.build_vocab(tiny_docs, min_freq=1)
        doc = corpus.Document("d", ("crash", "leak", "audit", "data", "input", "buffer"),
                              (("crash", "leak", "audit"), ("data", "input", "buffer")),
                              corpus.LabelVector(True))
        ids, mask = corpus.encode_hierarchical(doc, vocab, max_sentences=4, max_words=5)
        assert ids.shape == (4, 5)
        assert mask[0].tolist() == [1, 1, 1, 0, 0]
        assert mask[2:].sum() == 0
        assert (ids[2:] == corpus.PAD_ID).all()

    def test_sentence_truncation(self):
        sentences = tuple((f"w{i}",) for i in range(20))
        doc = corpus.Document("d", tuple(t for s in sentences for t in s), sentences,
                              corpus.LabelVector(True))
        vocab = corpus.build_vocab([doc], min_freq=1)
        ids, mask = corpus.encode_hierarchical(doc, vocab, max_sentences=16, max_words=2)
        assert mask.any(axis=1).sum() == 16

    def test_empty_document_grid(self):
        doc = corpus.Document("d", (), (), corpus.LabelVector(True))
        vocab = corpus.Vocabulary({"[PAD]": 0, "[UNK]": 1}, ("[PAD]", "[UNK]"), 1)
        ids, mask = corpus.encode_hierarchical(doc, vocab, max_sentences=3, max_words=4)
        assert (ids == corpus.PAD_ID).all()
        assert mask.sum() == 0


class TestStratifiedSplit:
    def test_fixture_sizes(self, default_split):
        train, val, test = default_split
        assert (len(train), len(val), len(test)) == (716, 134, 45)

    def test_partition_exact(self, fixture_docs, default_split):
        ids = [d.id for subset in default_split for d in subset]
        assert len(ids) == len(fixture_docs)
        assert len(set(ids)) == len(ids)

    def test_prevalence_within_tolerance(self, fixture_docs, default_split):
        counts, _ = corpus.label_histogram(fixture_docs)
        global_prev = [c / len(fixture_docs) for c in counts]
        for subset, tolerance in zip(default_split, (0.02, 0.02, 0.05)):
            sub_counts, _ = corpus.label_histogram(subset)
            for c, g in zip(sub_counts, global_prev):
                assert abs(c / len(subset) - g) <= tolerance

    def test_deterministic(self, fixture_docs, default_split):
        again = corpus.stratified_split(fixture_docs, corpus.SplitSpec())
        for a, b in zip(default_split, again):
            assert [d.id for d in a] == [d.id for d in b]

    def test_single_label_degenerate(self):
        docs = [corpus.Document(str(i), ("a",), (("a",),), corpus.LabelVector(integrity=True))
                for i in range(100)]
        train, val, test = corpus.stratified_split(docs, corpus.SplitSpec(seed=11))
        for subset in (train, val, test):
            counts, _ = corpus.label_histogram(subset)
            assert counts[3] == len(subset)

    def test_empty_subset_rejected(self):
        docs = [corpus.Document(str(i), ("a",), (("a",),), corpus.LabelVector(True))
                for i in range(5)]
        with pytest.raises(ConfigError):
            corpus.stratified_split(docs, corpus.SplitSpec())

    def test_bad_fractions_rejected(self, tiny_docs):
        with pytest.raises(ConfigError):
            corpus.stratified_split(tiny_docs, corpus.SplitSpec(0.5, 0.3, 0.1))
        with pytest.raises(ConfigError):
            corpus.stratified_split(tiny_docs, corpus.SplitSpec(0.9, 0.2, -0.1))


class TestSubsetSizes:
    def test_largest_remainder_on_fixture_size(self):
        assert corpus.subset_sizes(895, (0.80, 0.15, 0.05)) == (716, 134, 45)

    def test_sums_match(self):
        rng = np.random.default_rng(8)
        for _ in range(200):
            n = int(rng.integers(3, 2000))
            raw = rng.random(3) + 0.05
            fractions = tuple(raw / raw.sum())
            sizes = corpus.subset_sizes(n, fractions)
            assert sum(sizes) == n


class TestSerialization:
    def test_jsonl_roundtrip(self, tmp_path, fixture_docs):
        path = tmp_path / "corpus.jsonl"
        corpus.write_jsonl(fixture_docs[:25], path)
        again = corpus.read_jsonl(path)
        assert again == fixture_docs[:25]

    def test_jsonl_deterministic(self, tmp_path, fixture_docs):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        corpus.write_jsonl(fixture_docs[:50], a)
        corpus.write_jsonl(fixture_docs[:50], b)
        assert a.read_bytes() == b.read_bytes()

    def test_split_manifest_roundtrip(self, tmp_path, fixture_docs, default_split):
        path = tmp_path / "split.json"
        spec = corpus.SplitSpec()
        corpus.write_split_manifest(default_split, spec, path)
        manifest = corpus.read_split_manifest(path)
        assert manifest["seed"] == spec.seed
        train = corpus.select_subset(fixture_docs, manifest, "train")
        assert [d.id for d in train] == [d.id for d in default_split[0]]

    def test_unknown_subset(self, tmp_path, fixture_docs, default_split):
        path = tmp_path / "split.json"
        corpus.write_split_manifest(default_split, corpus.SplitSpec(), path)
        manifest = corpus.read_split_manifest(path)
        with pytest.raises(ConfigError, match="unknown subset"):
            corpus.select_subset(fixture_docs, manifest, "holdout")
