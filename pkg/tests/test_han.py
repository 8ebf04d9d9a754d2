"""Hierarchical attention network: forward contracts, masking, gradients."""

import numpy as np
import pytest

from conseq import corpus, nn, trainer
from conseq.errors import ConfigError, InvalidInputError
from conseq.han import HanConfig, HanModel

DESK = dict(vocab_size=7, embed_dim=4, gru_units=3, attention_dim=3,
            max_sentences=2, max_words=3)


def desk_model(seed=3, **overrides):
    config = HanConfig(**{**DESK, **overrides})
    tokens = ("[PAD]", "[UNK]", "crash", "leak", "bypass", "tamper", "audit")
    vocab = corpus.Vocabulary({t: i for i, t in enumerate(tokens)}, tokens, 1)
    return HanModel(config, vocab, seed=seed)


class TestConfig:
    def test_defaults(self):
        config = HanConfig(vocab_size=100)
        assert (config.embed_dim, config.gru_units, config.attention_dim) == (100, 64, 64)
        assert (config.max_sentences, config.max_words) == (16, 32)
        assert config.dropout_p == 0.0

    def test_validation(self):
        with pytest.raises(ConfigError):
            HanConfig(vocab_size=0)
        with pytest.raises(ConfigError):
            HanConfig(vocab_size=10, num_labels=4)


class TestForward:
    def test_output_shape_and_range(self):
        model = desk_model()
        rng = np.random.default_rng(0)
        grids = rng.integers(0, 7, (3, 2, 3))
        masks = np.ones((3, 2, 3))
        logits = model.forward(grids, masks)
        probs = nn.sigmoid(logits)
        assert probs.shape == (3, 5)
        assert ((probs >= 0) & (probs <= 1)).all()

    def test_single_sentence_weight_is_one(self):
        model = desk_model()
        grid = np.array([[2, 3, 4], [0, 0, 0]])
        mask = np.array([[1.0, 1, 1], [0, 0, 0]])
        probs, word_w, sent_w = model.infer(grid, mask)
        assert sent_w[0] == 1.0
        assert sent_w[1] == 0.0

    def test_identical_sentences_near_even_weights(self):
        # the recurrent sentence encoder sees different left/right context for
        # the two copies, so the symmetry is close but not exact
        model = desk_model()
        grid = np.array([[2, 3, 4], [2, 3, 4]])
        mask = np.ones((2, 3))
        _, _, sent_w = model.infer(grid, mask)
        np.testing.assert_allclose(sent_w, [0.5, 0.5], atol=5e-3)
        assert sent_w.sum() == pytest.approx(1.0, abs=1e-12)

    def test_attention_weights_normalized(self):
        model = desk_model()
        rng = np.random.default_rng(1)
        grids = rng.integers(2, 7, (4, 2, 3))
        masks = (rng.random((4, 2, 3)) > 0.3).astype(float)
        masks[:, 0, 0] = 1.0  # every document keeps at least one token
        logits = model.forward(grids, masks)
        sentence_present = masks.any(axis=2)
        word_sums = model.word_weights.sum(axis=2)
        np.testing.assert_allclose(word_sums[sentence_present], 1.0, atol=1e-9)
        assert (word_sums[~sentence_present] == 0).all()
        np.testing.assert_allclose(model.sentence_weights.sum(axis=1), 1.0, atol=1e-9)
        assert (model.sentence_weights[~sentence_present] == 0).all()

    def test_empty_document_raises_invalid_input(self):
        model = desk_model()
        with pytest.raises(InvalidInputError):
            model.forward(np.zeros((1, 2, 3), dtype=np.int64), np.zeros((1, 2, 3)))

    def test_all_pad_rows_permutation_invariant(self):
        model = desk_model()
        grid = np.array([[2, 3, 4], [0, 0, 0], [0, 0, 0]])
        mask = np.array([[1.0, 1, 1], [0, 0, 0], [0, 0, 0]])
        base = model.forward(grid[None], mask[None], mode="eval")
        permuted = model.forward(grid[[0, 2, 1]][None], mask[[0, 2, 1]][None], mode="eval")
        np.testing.assert_array_equal(base, permuted)

    def test_extra_pad_sentences_leave_probs_unchanged(self):
        small = desk_model()
        big = desk_model(max_sentences=4)
        for p, q in zip(big.parameters(), small.parameters()):
            p.value[...] = q.value
        grid = np.array([[2, 3, 4], [5, 6, 2]])
        mask = np.ones((2, 3))
        out_small = small.forward(grid[None], mask[None], mode="eval")
        grid_big = np.vstack([grid, np.zeros((2, 3), dtype=np.int64)])
        mask_big = np.vstack([mask, np.zeros((2, 3))])
        out_big = big.forward(grid_big[None], mask_big[None], mode="eval")
        np.testing.assert_array_equal(out_small, out_big)

    def test_outputs_finite_for_extreme_embeddings(self):
        model = desk_model()
        model.embedding.table.value[...] = 1e3  # hostile but finite inputs
        rng = np.random.default_rng(6)
        grids = rng.integers(0, 7, (3, 2, 3))
        masks = np.ones((3, 2, 3))
        logits = model.forward(grids, masks)
        assert np.isfinite(logits).all()
        assert np.isfinite(model.word_weights).all()
        assert np.isfinite(model.sentence_weights).all()

    def test_eval_forward_bitwise_repeatable(self):
        model = desk_model()
        rng = np.random.default_rng(2)
        grids = rng.integers(0, 7, (2, 2, 3))
        masks = np.ones((2, 2, 3))
        a = model.forward(grids, masks, mode="eval")
        b = model.forward(grids, masks, mode="eval")
        np.testing.assert_array_equal(a, b)


class TestGradients:
    def test_whole_model_gradcheck_at_desk_dims(self):
        model = desk_model()
        rng = np.random.default_rng(4)
        grids = rng.integers(0, 7, (2, 2, 3))
        masks = np.array([[[1, 1, 1], [1, 1, 0]], [[1, 1, 1], [0, 0, 0]]], dtype=float)
        targets = rng.integers(0, 2, (2, 5)).astype(float)
        params = model.parameters()

        def loss_fn():
            for p in params:
                p.zero_grad()
            loss, dlogits = nn.bce_with_logits(model.forward(grids, masks), targets)
            model.backward(dlogits)
            return loss

        report = nn.grad_check(loss_fn, params, rng=np.random.default_rng(5))
        assert report.passed, dict(report.per_parameter)


class TestPredictThreshold:
    def test_threshold_rounds_up_at_exact_value(self):
        labels = trainer.threshold_probs(np.array([0.9, 0.1, 0.5, 0.4, 0.6]))
        assert labels == corpus.LabelVector(True, False, True, False, True)

    def test_all_zero_probs(self):
        assert trainer.threshold_probs(np.zeros(5)) == corpus.LabelVector()

    def test_zero_threshold_sets_everything(self):
        labels = trainer.threshold_probs(np.array([0.0, 0.1, 0.2, 0.3, 0.4]), threshold=0.0)
        assert all(getattr(labels, n) for n in corpus.LABELS)


class TestAttentionReport:
    def test_report_structure(self):
        model = desk_model()
        doc = corpus.Document(
            "D-1",
            ("crash", "leak", "bypass", "tamper"),
            (("crash", "leak"), ("bypass", "tamper")),
            corpus.LabelVector(True),
        )
        report = model.attention_report(doc)
        assert report["id"] == "D-1"
        assert len(report["probs"]) == 5
        assert len(report["sentences"]) == 2
        first = report["sentences"][0]
        assert first["words"] == ["crash", "leak"]
        assert len(first["word_weights"]) == 2
        total = sum(s["sentence_weight"] for s in report["sentences"])
        assert total == pytest.approx(1.0, abs=1e-9)
