"""Evaluation battery: per-label and aggregate multi-label metrics.

All values derive from integer 2x2 contingency counts per label, so the
numbers are exactly reproducible by naive counting.  Zero-denominator
precision/recall are reported as 0 with a degenerate flag instead of NaN,
which keeps reports stable on small subsets.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from conseq.errors import InvalidInputError, SchemaError, ShapeError
from conseq.labels import LABEL_TITLES, LABELS, NUM_LABELS

REPORT_SCHEMA_VERSION = 1


@dataclass
class PredictionMatrix:
    """Aligned truth/probability/prediction matrices for N documents."""

    y_true: np.ndarray
    y_prob: np.ndarray
    y_pred: np.ndarray
    threshold: float = 0.5

    def __post_init__(self):
        self.y_true = np.asarray(self.y_true, dtype=np.int64)
        self.y_prob = np.asarray(self.y_prob, dtype=np.float64)
        self.y_pred = np.asarray(self.y_pred, dtype=np.int64)
        shapes = {self.y_true.shape, self.y_prob.shape, self.y_pred.shape}
        if len(shapes) != 1:
            raise ShapeError(f"inconsistent matrix shapes: {sorted(shapes)}")
        if self.y_true.ndim != 2 or self.y_true.shape[1] != NUM_LABELS:
            raise ShapeError(f"expected (N, {NUM_LABELS}) matrices, got {self.y_true.shape}")
        expected = (self.y_prob >= self.threshold).astype(np.int64)
        if not np.array_equal(expected, self.y_pred):
            raise ShapeError("y_pred inconsistent with y_prob at the recorded threshold")

    @classmethod
    def from_probs(cls, y_true, y_prob, threshold: float = 0.5) -> "PredictionMatrix":
        y_prob = np.asarray(y_prob, dtype=np.float64)
        return cls(
            y_true=np.asarray(y_true, dtype=np.int64),
            y_prob=y_prob,
            y_pred=(y_prob >= threshold).astype(np.int64),
            threshold=threshold,
        )

    @property
    def n(self) -> int:
        return self.y_true.shape[0]


@dataclass
class MetricsReport:
    n: int
    threshold: float
    per_label: dict[str, dict] = field(default_factory=dict)
    micro: dict[str, float] = field(default_factory=dict)
    macro: dict[str, float] = field(default_factory=dict)
    exact_match_accuracy: float = 0.0
    mean_label_accuracy: float = 0.0
    schema_version: int = REPORT_SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "n": self.n,
            "threshold": self.threshold,
            "per_label": self.per_label,
            "micro": self.micro,
            "macro": self.macro,
            "exact_match_accuracy": self.exact_match_accuracy,
            "mean_label_accuracy": self.mean_label_accuracy,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MetricsReport":
        if data.get("schema_version") != REPORT_SCHEMA_VERSION:
            raise SchemaError(f"unsupported report schema {data.get('schema_version')!r}")
        return cls(
            n=data["n"],
            threshold=data["threshold"],
            per_label=data["per_label"],
            micro=data["micro"],
            macro=data["macro"],
            exact_match_accuracy=data["exact_match_accuracy"],
            mean_label_accuracy=data["mean_label_accuracy"],
            schema_version=data["schema_version"],
        )


def contingency(pm: PredictionMatrix, label_index: int) -> tuple[int, int, int, int]:
    """(tp, fp, fn, tn) integer counts for one label column."""
    truth = pm.y_true[:, label_index]
    pred = pm.y_pred[:, label_index]
    tp = int(np.sum((truth == 1) & (pred == 1)))
    fp = int(np.sum((truth == 0) & (pred == 1)))
    fn = int(np.sum((truth == 1) & (pred == 0)))
    tn = int(np.sum((truth == 0) & (pred == 0)))
    return tp, fp, fn, tn


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float, bool, bool]:
    """Precision/recall/F1 from counts, zero (flagged) on empty denominators."""
    p_degenerate = (tp + fp) == 0
    r_degenerate = (tp + fn) == 0
    precision = 0.0 if p_degenerate else tp / (tp + fp)
    recall = 0.0 if r_degenerate else tp / (tp + fn)
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return precision, recall, f1, p_degenerate, r_degenerate


def per_label_metrics(pm: PredictionMatrix, label_index: int) -> dict:
    if pm.n < 1:
        raise InvalidInputError("metrics need at least one row")
    tp, fp, fn, tn = contingency(pm, label_index)
    precision, recall, f1, p_deg, r_deg = _prf(tp, fp, fn)
    return {
        "accuracy": (tp + tn) / pm.n,
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "precision_degenerate": p_deg,
        "recall_degenerate": r_deg,
    }


def aggregate_metrics(pm: PredictionMatrix) -> MetricsReport:
    """Micro (summed counts), macro (unweighted means), and row accuracies."""
    if pm.n < 1:
        raise InvalidInputError("metrics need at least one row")
    per_label = {name: per_label_metrics(pm, i) for i, name in enumerate(LABELS)}

    tp = fp = fn = 0
    for i in range(NUM_LABELS):
        t, f_pos, f_neg, _ = contingency(pm, i)
        tp += t
        fp += f_pos
        fn += f_neg
    micro_p, micro_r, micro_f1, _, _ = _prf(tp, fp, fn)

    macro = {
        key: sum(per_label[name][key] for name in LABELS) / NUM_LABELS
        for key in ("precision", "recall", "f1")
    }
    exact = int(np.sum(np.all(pm.y_true == pm.y_pred, axis=1))) / pm.n
    mean_acc = sum(per_label[name]["accuracy"] for name in LABELS) / NUM_LABELS

    return MetricsReport(
        n=pm.n,
        threshold=pm.threshold,
        per_label=per_label,
        micro={"precision": micro_p, "recall": micro_r, "f1": micro_f1},
        macro=macro,
        exact_match_accuracy=exact,
        mean_label_accuracy=mean_acc,
    )


def confusion_matrix_argmax(pm: PredictionMatrix) -> np.ndarray:
    """5x5 grid: dominant true label (argmax prob among true flags) vs
    overall argmax prediction.  Ties resolve to the lowest label index."""
    if not (pm.y_true.sum(axis=1) > 0).all():
        raise InvalidInputError("confusion matrix needs at least one true flag per row")
    grid = np.zeros((NUM_LABELS, NUM_LABELS), dtype=np.int64)
    masked = np.where(pm.y_true == 1, pm.y_prob, -np.inf)
    rows = np.argmax(masked, axis=1)
    cols = np.argmax(pm.y_prob, axis=1)
    for r, c in zip(rows, cols):
        grid[r, c] += 1
    return grid


def baseline_all_positive(y_true) -> MetricsReport:
    """Reference report for the predictor that sets every flag on every row."""
    y_true = np.asarray(y_true, dtype=np.int64)
    ones = np.ones_like(y_true, dtype=np.float64)
    return aggregate_metrics(PredictionMatrix.from_probs(y_true, ones, threshold=0.5))


def render_text_table(report: MetricsReport) -> str:
    """Plain-text table: one row per label, accuracy/precision/recall/F1."""
    width = max(len(t) for t in LABEL_TITLES)
    lines = [
        f"{'Label':<{width}}  Accuracy  Precision  Recall  F1-Score",
    ]
    for name, title in zip(LABELS, LABEL_TITLES):
        row = report.per_label[name]
        lines.append(
            f"{title:<{width}}  {row['accuracy']:8.4f}  {row['precision']:9.4f}  "
            f"{row['recall']:6.4f}  {row['f1']:8.4f}"
        )
    lines.append("")
    lines.append(
        f"Micro: precision {report.micro['precision']:.4f}  "
        f"recall {report.micro['recall']:.4f}  f1 {report.micro['f1']:.4f}"
    )
    lines.append(
        f"Macro: precision {report.macro['precision']:.4f}  "
        f"recall {report.macro['recall']:.4f}  f1 {report.macro['f1']:.4f}"
    )
    lines.append(f"Exact-match accuracy: {report.exact_match_accuracy:.4f}")
    lines.append(f"Mean label accuracy:  {report.mean_label_accuracy:.4f}")
    lines.append(f"Documents: {report.n}  threshold: {report.threshold}")
    return "\n".join(lines) + "\n"


def write_confusion_csv(grid: np.ndarray, path: str | Path) -> None:
    """Header row of predicted labels, leading column of true labels."""
    with Path(path).open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["true\\predicted", *LABEL_TITLES])
        for title, row in zip(LABEL_TITLES, grid):
            writer.writerow([title, *[int(x) for x in row]])


def render_report(
    report: MetricsReport,
    confusion: np.ndarray | None,
    out_dir: str | Path,
    figures: bool = True,
) -> dict[str, Path]:
    """Write the JSON/CSV/text report files (plus figures) into out_dir."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = {"json": out_dir / "report.json", "text": out_dir / "report.txt"}
        paths["json"].write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
        paths["text"].write_text(render_text_table(report))
        if confusion is not None:
            paths["confusion_csv"] = out_dir / "confusion.csv"
            write_confusion_csv(confusion, paths["confusion_csv"])
        if figures:
            from conseq import figures as fig

            paths["metrics_png"] = fig.save_metric_bars(report, out_dir / "metrics.png")
            if confusion is not None:
                paths["confusion_png"] = fig.save_confusion_heatmap(
                    confusion, out_dir / "confusion.png"
                )
    except OSError as exc:
        raise IOError(f"cannot write report into {out_dir}: {exc}") from exc
    return paths


def parse_report(path: str | Path) -> MetricsReport:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError(f"cannot parse report {path}: {exc}") from exc
    return MetricsReport.from_dict(data)
