"""Command-line interface: ingest, split, train, eval, gradcheck, predict.

Configuration is a flat, namespaced key set (see KEY_DEFS) merged in this
order: built-in defaults < --preset bundle < --config JSON file < --set
overrides.  Unknown keys are rejected.

Exit codes:
    0  success
    2  usage error (bad flags)
    3  schema error (malformed input data, manifests, checkpoints)
    4  configuration error (bad values, unknown keys, infeasible requests)
    5  numeric error (divergence, failed gradient check, shape mismatch)
    6  I/O error

The only environment variable consulted is CONSEQ_WORKDIR, an optional
default for --workdir.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from conseq import corpus, metrics, subword, trainer
from conseq.encoder import EncoderConfig, TransformerClassifier
from conseq.errors import (
    ConfigError,
    InvalidInputError,
    NumericError,
    SchemaError,
    ShapeError,
)
from conseq.han import HanConfig, HanModel
from conseq.labels import LABEL_TITLES, LABELS
from conseq.nn import bce_with_logits, grad_check

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_SCHEMA = 3
EXIT_CONFIG = 4
EXIT_NUMERIC = 5
EXIT_IO = 6

# key -> (default, type, help).  None defaults are resolved per backbone.
KEY_DEFS: dict[str, tuple] = {
    "corpus.min_freq": (1, int, "minimum token frequency for the word vocabulary"),
    "split.train_fraction": (0.80, float, "training fraction of the corpus"),
    "split.validation_fraction": (0.15, float, "validation fraction of the corpus"),
    "split.test_fraction": (0.05, float, "test fraction of the corpus"),
    "split.seed": (7, int, "seed for the stratified split"),
    "han.embed_dim": (100, int, "word embedding width"),
    "han.gru_units": (64, int, "hidden units per GRU direction (word and sentence level)"),
    "han.attention_dim": (64, int, "additive attention projection width"),
    "han.max_sentences": (16, int, "sentence rows in the document grid"),
    "han.max_words": (32, int, "word columns per sentence row"),
    "han.dropout": (0.0, float, "dropout before the output layer"),
    "encoder.layers": (2, int, "encoder layers (12 in the full-scale configuration)"),
    "encoder.hidden_dim": (64, int, "model width (768 in the full-scale configuration)"),
    "encoder.heads": (4, int, "attention heads"),
    "encoder.ffn_dim": (256, int, "feed-forward width (4x hidden)"),
    "encoder.max_len": (256, int, "maximum subword sequence length, CLS/SEP included"),
    "encoder.dropout": (0.3, float, "dropout on the pooled output"),
    "encoder.vocab_size": (512, int, "subword vocabulary size, reserved tokens included"),
    "train.batch_size": (32, int, "mini-batch size for training and validation"),
    "train.learning_rate": (None, float,
                            "Adam learning rate; default 1e-4 for han, 1e-5 for encoder "
                            "(desk presets use 3e-3 / 3e-4, which converge from scratch)"),
    "train.epochs": (50, int, "epoch cap"),
    "train.patience": (5, int, "early-stopping patience in epochs"),
    "train.threshold": (0.5, float, "probability threshold for setting a label flag"),
    "train.grad_clip": (0.0, float, "global gradient-norm clip; 0 disables"),
    "train.dtype": ("float64", str, "float64 or float32 parameters"),
}

DEFAULT_LEARNING_RATES = {"han": 1e-4, "encoder": 1e-5}

PRESETS: dict[str, dict] = {
    "paper-bert": {
        "_backbone": "encoder",
        "encoder.layers": 12,
        "encoder.hidden_dim": 768,
        "encoder.heads": 12,
        "encoder.ffn_dim": 3072,
        "encoder.max_len": 256,
        "encoder.dropout": 0.3,
        "train.batch_size": 32,
        "train.learning_rate": 1e-5,
    },
    "paper-han": {
        "_backbone": "han",
        "han.embed_dim": 100,
        "han.gru_units": 64,
        "han.attention_dim": 64,
        "han.max_sentences": 16,
        "han.max_words": 32,
        "han.dropout": 0.0,
        "train.batch_size": 32,
        "train.learning_rate": 1e-4,
    },
    "desk": {
        "han": {
            "han.embed_dim": 48,
            "han.gru_units": 32,
            "han.attention_dim": 32,
            "han.max_sentences": 12,
            "han.max_words": 24,
            "train.batch_size": 8,
            "train.learning_rate": 3e-3,
            "train.epochs": 40,
        },
        "encoder": {
            "encoder.layers": 2,
            "encoder.hidden_dim": 64,
            "encoder.heads": 4,
            "encoder.ffn_dim": 256,
            "encoder.max_len": 96,
            "train.batch_size": 8,
            "train.learning_rate": 3e-4,
            "train.epochs": 100,
        },
    },
}


def config_table() -> str:
    lines = ["configuration keys (defaults in brackets):"]
    for key, (default, _, help_text) in KEY_DEFS.items():
        shown = "per-backbone" if default is None else repr(default)
        lines.append(f"  {key:<28} [{shown}] {help_text}")
    lines.append("presets: paper-bert, paper-han, desk (desk is backbone-specific)")
    return "\n".join(lines)


@dataclass
class RunConfig:
    values: dict

    def __getitem__(self, key: str):
        return self.values[key]

    def split_spec(self) -> corpus.SplitSpec:
        return corpus.SplitSpec(
            train_fraction=self["split.train_fraction"],
            validation_fraction=self["split.validation_fraction"],
            test_fraction=self["split.test_fraction"],
            seed=self["split.seed"],
        )

    def train_config(self, backbone: str) -> trainer.TrainConfig:
        lr = self["train.learning_rate"]
        if lr is None:
            lr = DEFAULT_LEARNING_RATES[backbone]
        return trainer.TrainConfig(
            learning_rate=lr,
            batch_size=self["train.batch_size"],
            epochs=self["train.epochs"],
            patience=self["train.patience"],
            threshold=self["train.threshold"],
            grad_clip=self["train.grad_clip"],
        )

    def han_config(self, vocab_size: int) -> HanConfig:
        return HanConfig(
            vocab_size=vocab_size,
            embed_dim=self["han.embed_dim"],
            gru_units=self["han.gru_units"],
            attention_dim=self["han.attention_dim"],
            max_sentences=self["han.max_sentences"],
            max_words=self["han.max_words"],
            dropout_p=self["han.dropout"],
            dtype=self["train.dtype"],
        )

    def encoder_config(self, vocab_size: int) -> EncoderConfig:
        return EncoderConfig(
            vocab_size=vocab_size,
            layers=self["encoder.layers"],
            hidden_dim=self["encoder.hidden_dim"],
            heads=self["encoder.heads"],
            ffn_dim=self["encoder.ffn_dim"],
            max_len=self["encoder.max_len"],
            dropout_p=self["encoder.dropout"],
            dtype=self["train.dtype"],
        )


def _coerce(key: str, raw):
    _, typ, _ = KEY_DEFS[key]
    try:
        if typ is float and isinstance(raw, (int, float)):
            return float(raw)
        if typ is int:
            if isinstance(raw, bool) or (isinstance(raw, float) and not raw.is_integer()):
                raise ValueError(raw)
            return int(raw)
        if isinstance(raw, str) and typ is not str:
            return typ(raw)
        if not isinstance(raw, typ):
            raise ValueError(raw)
        return raw
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key}: {raw!r} (expected {typ.__name__})") from exc


def build_config(
    config_path: str | None = None,
    preset: str | None = None,
    backbone: str | None = None,
    overrides=(),
) -> RunConfig:
    values = {key: default for key, (default, _, _) in KEY_DEFS.items()}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; have {sorted(PRESETS)}")
        bundle = PRESETS[preset]
        if preset == "desk":
            if backbone is None:
                raise ConfigError("the desk preset needs --backbone")
            bundle = bundle[backbone]
        else:
            wanted = bundle["_backbone"]
            if backbone is not None and backbone != wanted:
                raise ConfigError(f"preset {preset!r} is for backbone {wanted!r}")
            bundle = {k: v for k, v in bundle.items() if not k.startswith("_")}
        for key, value in bundle.items():
            values[key] = _coerce(key, value)
    if config_path is not None:
        try:
            raw = json.loads(Path(config_path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {config_path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"config file {config_path} must hold a flat JSON object")
        for key, value in raw.items():
            if key not in KEY_DEFS:
                raise ConfigError(f"unknown configuration key {key!r}")
            values[key] = _coerce(key, value)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, raw = item.partition("=")
        if key not in KEY_DEFS:
            raise ConfigError(f"unknown configuration key {key!r}")
        values[key] = _coerce(key, raw)
    return RunConfig(values)


def preset_backbone(preset: str | None) -> str | None:
    if preset in ("paper-bert", "paper-han"):
        return PRESETS[preset]["_backbone"]
    return None


def resolve_workdir(flag_value: str | None) -> Path:
    """--workdir, falling back to the CONSEQ_WORKDIR environment variable."""
    value = flag_value or os.environ.get("CONSEQ_WORKDIR")
    if not value:
        raise ConfigError("no workdir: pass --workdir or set CONSEQ_WORKDIR")
    return Path(value)


def build_model(backbone: str, cfg: RunConfig, train_docs, seed: int):
    """Vocabulary learned from the training split only, then the model."""
    if backbone == "han":
        vocab = corpus.build_vocab(train_docs, min_freq=cfg["corpus.min_freq"])
        return HanModel(cfg.han_config(len(vocab)), vocab, seed=seed)
    if backbone == "encoder":
        vocab = subword.learn_subwords(train_docs, target_size=cfg["encoder.vocab_size"])
        return TransformerClassifier(cfg.encoder_config(len(vocab)), vocab, seed=seed)
    raise ConfigError(f"unknown backbone {backbone!r}")


# ----------------------------------------------------------------- commands


def cmd_ingest(args) -> int:
    docs, stats = corpus.ingest(args.input)
    if not docs:
        raise SchemaError(f"{args.input}: no documents survive ingestion")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    corpus.write_jsonl(docs, out)
    counts, total = stats.label_counts, stats.label_total
    print(f"rows parsed:          {stats.rows}")
    print(f"dropped (no labels):  {stats.dropped_no_labels}")
    print(f"dropped (no tokens):  {stats.dropped_empty_after_cleaning}")
    print(f"documents retained:   {stats.documents}")
    width = max(len(t) for t in LABEL_TITLES)
    for title, count in zip(LABEL_TITLES, counts):
        print(f"{title:<{width}}  {count}")
    print(f"{'Total':<{width}}  {total}")
    if not args.no_figures:
        from conseq import figures

        fig_path = figures.save_label_histogram(counts, total, out.with_name("label_histogram.png"))
        print(f"figure: {fig_path}")
    print(f"corpus: {out}")
    return EXIT_OK


def cmd_split(args) -> int:
    docs = corpus.read_jsonl(args.corpus)
    fractions = [float(x) for x in args.ratios.split(",")]
    if len(fractions) != 3:
        raise ConfigError(f"--ratios needs three comma-separated fractions, got {args.ratios!r}")
    spec = corpus.SplitSpec(*fractions, seed=args.seed)
    subsets = corpus.stratified_split(docs, spec)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    corpus.write_split_manifest(subsets, spec, out)
    counts, _ = corpus.label_histogram(docs)
    global_prev = [c / len(docs) for c in counts]
    width = max(len(t) for t in LABEL_TITLES)
    print(f"{'subset':<12} {'size':>5}  " + "  ".join(f"{t:<{width}}" for t in LABEL_TITLES))
    for name, subset in zip(("train", "validation", "test"), subsets):
        c, _ = corpus.label_histogram(subset)
        prev = "  ".join(f"{x / len(subset):<{width}.3f}" for x in c)
        print(f"{name:<12} {len(subset):>5}  {prev}")
    print(f"{'global':<12} {len(docs):>5}  " + "  ".join(f"{p:<{width}.3f}" for p in global_prev))
    print(f"manifest: {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = build_config(args.config, args.preset, args.backbone, args.set or ())
    docs = corpus.read_jsonl(args.corpus)
    manifest = corpus.read_split_manifest(args.split)
    train_docs = corpus.select_subset(docs, manifest, "train")
    val_docs = corpus.select_subset(docs, manifest, "validation")
    if args.limit:
        if args.limit < 1:
            raise ConfigError(f"--limit must be >= 1, got {args.limit}")
        train_docs = train_docs[: args.limit]
        val_docs = train_docs  # overfit smoke: validate on the training subset
    model = build_model(args.backbone, cfg, train_docs, seed=args.seed)
    train_cfg = cfg.train_config(args.backbone)
    run_dir = resolve_workdir(args.workdir) / f"run-{args.seed}"
    run = trainer.train(model, train_docs, val_docs, train_cfg, args.seed, run_dir, log=print)
    if args.backbone == "encoder":
        subword.save_vocab(model.vocab, run_dir / "subwords.txt")
    best = run.records[run.best_epoch - 1] if run.best_epoch else None
    print(f"stop reason: {run.stop_reason}")
    if best is not None:
        print(f"best epoch {best.epoch}: val_loss {best.validation_loss:.6f} "
              f"val_micro_f1 {best.validation_micro_f1:.4f}")
    if run.best_checkpoint:
        print(f"best checkpoint: {run.best_checkpoint}")
    if args.limit:
        peak = max(r.validation_micro_f1 for r in run.records)
        print(f"train-subset micro-F1 (peak): {peak:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model, manifest = trainer.load_model(args.checkpoint)
    docs = corpus.read_jsonl(args.corpus)
    split = corpus.read_split_manifest(args.split)
    subset = corpus.select_subset(docs, split, args.subset)
    if not subset:
        raise ConfigError(f"subset {args.subset!r} is empty")
    threshold = args.threshold
    loss, probs = trainer.evaluate(model, subset)
    y_true = np.stack([doc.labels.to_array() for doc in subset])
    pm = metrics.PredictionMatrix.from_probs(y_true, probs, threshold)
    report = metrics.aggregate_metrics(pm)
    confusion = metrics.confusion_matrix_argmax(pm)
    out_dir = Path(args.out) if args.out else resolve_workdir(args.workdir) / "reports" / args.subset
    paths = metrics.render_report(report, confusion, out_dir, figures=not args.no_figures)
    print(metrics.render_text_table(report), end="")
    print(f"validation loss: {loss:.6f}")
    for kind, path in sorted(paths.items()):
        print(f"{kind}: {path}")
    return EXIT_OK


def _gradcheck_han(seed: int):
    rng = np.random.default_rng(seed)
    tokens = ("buffer", "overflow", "service", "crash", "leak")
    vocab = corpus.Vocabulary(
        token_to_id={t: i for i, t in enumerate((corpus.PAD_TOKEN, corpus.UNK_TOKEN) + tokens)},
        id_to_token=(corpus.PAD_TOKEN, corpus.UNK_TOKEN) + tokens,
        min_freq=1,
    )
    config = HanConfig(vocab_size=7, embed_dim=4, gru_units=3, attention_dim=3,
                       max_sentences=2, max_words=3)
    model = HanModel(config, vocab, seed=seed)
    grids = rng.integers(0, 7, (2, 2, 3))
    masks = np.array([[[1, 1, 1], [1, 1, 0]], [[1, 1, 1], [0, 0, 0]]], dtype=np.float64)
    targets = rng.integers(0, 2, (2, 5)).astype(np.float64)
    return model, (grids, masks), targets


def _gradcheck_encoder(seed: int, layers: int = 1):
    rng = np.random.default_rng(seed)
    docs = [
        corpus.Document("g1", ("crash", "leak"), (("crash", "leak"),), corpus.LabelVector(True)),
        corpus.Document("g2", ("bypass", "data"), (("bypass", "data"),), corpus.LabelVector(integrity=True)),
    ]
    vocab = subword.learn_subwords(docs, target_size=24)
    config = EncoderConfig(vocab_size=len(vocab), layers=layers, hidden_dim=8, heads=2,
                           ffn_dim=16, max_len=6, dropout_p=0.3)
    model = TransformerClassifier(config, vocab, seed=seed)
    ids, mask = model.encode_documents(docs)
    targets = rng.integers(0, 2, (2, 5)).astype(np.float64)
    return model, (ids, mask), targets


def run_gradcheck(backbone: str, seed: int = 0, layers: int = 1):
    """Gradient-check one backbone at small dimensions; returns (report, groups)."""
    if backbone == "han":
        model, inputs, targets = _gradcheck_han(seed)
    elif backbone == "encoder":
        model, inputs, targets = _gradcheck_encoder(seed, layers)
    else:
        raise ConfigError(f"unknown backbone {backbone!r}")

    params = model.parameters()

    def loss_fn():
        for p in params:
            p.zero_grad()
        logits = model.forward(*inputs, mode="eval")
        loss, dlogits = bce_with_logits(logits, targets)
        model.backward(dlogits)
        return loss

    report = grad_check(loss_fn, params, rng=np.random.default_rng(seed + 1))
    return report, model.parameter_groups()


def cmd_gradcheck(args) -> int:
    backbones = ["han", "encoder"] if args.backbone == "both" else [args.backbone]
    all_passed = True
    for backbone in backbones:
        report, groups = run_gradcheck(backbone, seed=args.seed, layers=args.layers)
        print(f"[{backbone}] max relative error {report.max_rel_err:.3e} "
              f"(tolerance {report.tolerance:g})")
        width = max(len(g) for g in groups)
        for group, params in groups.items():
            if not params:
                print(f"  {group:<{width}}  (no parameters)  ok")
                continue
            err = max(report.per_parameter[p.name] for p in params)
            verdict = "ok" if err < report.tolerance else "FAIL"
            print(f"  {group:<{width}}  rel_err={err:.3e}  {verdict}")
        all_passed = all_passed and report.passed
    if not all_passed:
        raise NumericError("gradient check failed")
    return EXIT_OK


def cmd_predict(args) -> int:
    model, manifest = trainer.load_model(args.checkpoint)
    if args.text is not None:
        texts = [args.text]
    else:
        texts = [line for line in Path(args.file).read_text().splitlines() if line.strip()]
    for index, text in enumerate(texts):
        sentences = tuple(
            tuple(tokens)
            for tokens in (corpus.clean_text(s) for s in corpus.split_sentences(text))
            if tokens
        )
        tokens = tuple(t for sentence in sentences for t in sentence)
        record: dict = {"index": index, "text": text}
        if not tokens:
            record["no_content"] = True
        else:
            doc = corpus.Document(f"adhoc-{index}", tokens, sentences, corpus.LabelVector())
            [(probs, labels)] = trainer.predict_batch(model, [doc], threshold=args.threshold)
            record["probs"] = {name: float(p) for name, p in zip(LABELS, probs)}
            record["labels"] = [name for name in LABELS if getattr(labels, name)]
            if args.attention and model.backbone == "han":
                record["attention"] = model.attention_report(doc)
        print(json.dumps(record, sort_keys=True))
    return EXIT_OK


# ------------------------------------------------------------------- parser


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="conseq",
        description="Predict cyberattack-consequence labels from CWE weakness descriptions.",
        epilog=config_table(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse and clean a CWE CSV into a corpus JSONL")
    p.add_argument("--input", required=True, help="CWE CSV (cwe_id,name,description,consequences)")
    p.add_argument("--out", required=True, help="output JSONL path")
    p.add_argument("--no-figures", action="store_true", help="skip the histogram figure")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("split", help="stratified train/validation/test split")
    p.add_argument("--corpus", required=True, help="corpus JSONL from ingest")
    p.add_argument("--out", required=True, help="split manifest JSON path")
    p.add_argument("--ratios", default="0.8,0.15,0.05", help="train,validation,test fractions")
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train one backbone on an existing split")
    p.add_argument("--backbone", choices=("han", "encoder"), help="model family")
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", required=True, help="split manifest JSON")
    p.add_argument("--workdir",
                   help="directory for run-<seed>/ outputs (default: $CONSEQ_WORKDIR)")
    p.add_argument("--config", help="flat JSON configuration file")
    p.add_argument("--preset", choices=("paper-bert", "paper-han", "desk"))
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--limit", type=int, default=0,
                   help="overfit smoke: train (and validate) on the first N training documents")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one subset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--subset", default="test", help="train, validation or test")
    p.add_argument("--workdir",
                   help="default parent for report output (default: $CONSEQ_WORKDIR)")
    p.add_argument("--out", help="report directory (default <workdir>/reports/<subset>)")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every layer")
    p.add_argument("--backbone", choices=("han", "encoder", "both"), default="both")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--layers", type=int, default=1,
                   help="encoder layers for the check (0 checks the head alone)")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("predict", help="classify ad-hoc text with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--text", help="one description")
    group.add_argument("--file", help="file with one description per line")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--attention", action="store_true",
                   help="include attention weights (han checkpoints)")
    p.set_defaults(func=cmd_predict)

    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    if getattr(args, "command", None) == "train":
        backbone = args.backbone or preset_backbone(args.preset)
        if backbone is None:
            parser.error("train needs --backbone (or a backbone-specific --preset)")
        args.backbone = backbone
    try:
        return args.func(args)
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except InvalidInputError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, ShapeError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
