"""Mini-batch training loop shared by both backbones.

Each epoch: seeded shuffle, fixed-size batches (final partial batch kept),
forward -> BCE -> backward -> Adam, then a full validation pass in
evaluation mode.  A checkpoint is written whenever the validation loss
strictly improves; training stops at the epoch cap or after `patience`
epochs without improvement.

Evaluation-mode passes run one document at a time, which makes predictions
independent of batch size and batch composition by construction.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from conseq import metrics
from conseq.corpus import Document, LabelVector
from conseq.encoder import TransformerClassifier
from conseq.errors import ConfigError, NumericError, SchemaError
from conseq.han import HanModel, fingerprint_meta
from conseq.nn import AdamState, adam_step, bce_with_logits, sigmoid
from conseq.nn.checkpoint import load_checkpoint, restore_parameters, save_checkpoint

BACKBONES = {"han": HanModel, "encoder": TransformerClassifier}


@dataclass
class TrainConfig:
    learning_rate: float
    batch_size: int = 32
    epochs: int = 50
    patience: int = 5
    threshold: float = 0.5
    grad_clip: float = 0.0  # 0 disables clipping

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1 or self.patience < 1:
            raise ConfigError("batch_size, epochs and patience must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    validation_loss: float
    validation_micro_f1: float


@dataclass
class TrainRun:
    backbone: str
    config: dict
    seed: int
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int | None = None
    stop_reason: str = "completed"
    best_checkpoint: str | None = None

    def to_dict(self) -> dict:
        return {
            "backbone": self.backbone,
            "config": self.config,
            "seed": self.seed,
            "records": [asdict(r) for r in self.records],
            "best_epoch": self.best_epoch,
            "stop_reason": self.stop_reason,
            "best_checkpoint": self.best_checkpoint,
        }


def threshold_probs(probs, threshold: float = 0.5) -> LabelVector:
    """Flag set iff its probability reaches the threshold."""
    return LabelVector.from_array(np.asarray(probs) >= threshold)


def evaluate(model, docs):
    """Evaluation-mode pass over documents, one at a time.

    Returns (mean BCE loss, probability matrix (N, 5)).
    """
    encoded = model.encode_documents(docs)
    targets = np.stack([doc.labels.to_array() for doc in docs])
    losses = []
    probs = []
    for i in range(len(docs)):
        logits = model.forward(*(a[i] for a in encoded), mode="eval")
        loss, _ = bce_with_logits(logits, targets[i : i + 1])
        losses.append(loss)
        probs.append(sigmoid(logits)[0])
    return float(np.mean(losses)), np.stack(probs)


def predict_batch(model, docs, threshold: float = 0.5):
    """Per-document probabilities and thresholded labels, order-preserving."""
    if not docs:
        return []
    encoded = model.encode_documents(docs)
    out = []
    for i in range(len(docs)):
        logits = model.forward(*(a[i] for a in encoded), mode="eval")
        probs = sigmoid(logits)[0]
        out.append((probs, threshold_probs(probs, threshold)))
    return out


def _clip_gradients(params, max_norm: float) -> None:
    total = np.sqrt(sum(float((p.grad**2).sum()) for p in params))
    if total > max_norm:
        scale = max_norm / total
        for p in params:
            p.grad *= scale


def train(
    model,
    train_docs: list[Document],
    val_docs: list[Document],
    cfg: TrainConfig,
    seed: int,
    run_dir: str | Path | None = None,
    log=None,
) -> TrainRun:
    """Train the model; returns the run record (and writes checkpoints/logs).

    With a run_dir, improving epochs write ``epoch-<n>.ckpt`` checkpoints and
    every epoch appends one JSON line to ``train_log.jsonl``; the run record
    lands in ``run.json``.
    """
    if not train_docs or not val_docs:
        raise ConfigError("training and validation sets must be non-empty")
    run_dir = Path(run_dir) if run_dir is not None else None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)

    shuffle_rng, dropout_rng = [
        np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2)
    ]
    params = model.parameters()
    adam = AdamState(learning_rate=cfg.learning_rate)
    encoded = model.encode_documents(train_docs)
    targets = np.stack([doc.labels.to_array() for doc in train_docs])
    n = len(train_docs)
    val_targets = np.stack([doc.labels.to_array() for doc in val_docs])

    run = TrainRun(
        backbone=model.backbone,
        config={"model": model.config.to_dict(), "train": asdict(cfg)},
        seed=seed,
    )
    best_loss = np.inf
    epochs_since_best = 0

    for epoch in range(1, cfg.epochs + 1):
        perm = shuffle_rng.permutation(n)
        epoch_loss = 0.0
        for batch_index, start in enumerate(range(0, n, cfg.batch_size)):
            idx = perm[start : start + cfg.batch_size]
            for p in params:
                p.zero_grad()
            logits = model.forward(*(a[idx] for a in encoded), mode="train", rng=dropout_rng)
            loss, dlogits = bce_with_logits(logits, targets[idx])
            if not np.isfinite(loss):
                raise NumericError(
                    f"non-finite training loss at epoch {epoch} batch {batch_index} (seed {seed})"
                )
            model.backward(dlogits)
            if cfg.grad_clip > 0:
                _clip_gradients(params, cfg.grad_clip)
            adam_step(params, adam)
            epoch_loss += loss * len(idx)
        train_loss = epoch_loss / n

        val_loss, val_probs = evaluate(model, val_docs)
        pm = metrics.PredictionMatrix.from_probs(val_targets, val_probs, cfg.threshold)
        micro_f1 = metrics.aggregate_metrics(pm).micro["f1"]
        record = EpochRecord(epoch, train_loss, val_loss, micro_f1)
        run.records.append(record)

        improved = val_loss < best_loss
        if improved:
            best_loss = val_loss
            run.best_epoch = epoch
            epochs_since_best = 0
            if run_dir is not None:
                path = run_dir / f"epoch-{epoch}.ckpt"
                meta = model.manifest_meta()
                save_checkpoint(
                    path,
                    params,
                    {
                        **meta,
                        "config_hash": fingerprint_meta(meta),
                        "train_config": asdict(cfg),
                        "seed": seed,
                        "epoch": epoch,
                        "validation_loss": val_loss,
                    },
                )
                run.best_checkpoint = str(path)
        else:
            epochs_since_best += 1

        if log is not None:
            log(
                f"epoch {epoch:3d}  train_loss {train_loss:.6f}  "
                f"val_loss {val_loss:.6f}  val_micro_f1 {micro_f1:.4f}"
                + ("  *" if improved else "")
            )
        if run_dir is not None:
            with (run_dir / "train_log.jsonl").open("a") as handle:
                handle.write(json.dumps(asdict(record), sort_keys=True) + "\n")

        if epochs_since_best >= cfg.patience:
            run.stop_reason = "early-stopped"
            break
    else:
        run.stop_reason = "completed"

    if run_dir is not None:
        (run_dir / "run.json").write_text(json.dumps(run.to_dict(), indent=2, sort_keys=True) + "\n")
    return run


def load_model(path: str | Path):
    """Rebuild a model from a checkpoint, refusing hash mismatches.

    Returns (model, manifest).
    """
    values, manifest = load_checkpoint(path)
    backbone = manifest.get("backbone")
    if backbone not in BACKBONES:
        raise SchemaError(f"checkpoint names unknown backbone {backbone!r}")
    model = BACKBONES[backbone].from_manifest(manifest)
    expected = manifest.get("config_hash")
    actual = fingerprint_meta(manifest)
    if expected != actual:
        raise SchemaError(
            f"checkpoint config/vocabulary hash mismatch: manifest says {expected}, "
            f"recomputed {actual}; refusing to run"
        )
    restore_parameters(model.parameters(), values)
    return model, manifest
