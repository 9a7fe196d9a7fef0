"""Weapon-presence confusion counts, evaluation formulas, and reporting.

Three-class predictions are binarized to weapon / no-weapon before
counting, since the evaluation formulas speak about presence.  Metrics
with a zero denominator are reported as undefined (``None``) rather
than coerced to 0.
"""

import json
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import LABEL_NONE, Dataset
from .ensemble import Ensemble, detect, serialize_ensemble
from .errors import PipelineError


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn}


def binarize(label: int) -> bool:
    """True for any weapon class, False for 'none'."""
    return label != LABEL_NONE


def confusion(predictions, labels) -> ConfusionMatrix:
    """Count weapon-presence outcomes over paired predictions and labels."""
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape != labels.shape or predictions.ndim != 1:
        raise ValueError(
            f"predictions and labels must be equal-length vectors, "
            f"got {predictions.shape} and {labels.shape}"
        )
    if predictions.size == 0:
        raise ValueError("cannot build a confusion matrix from zero samples")
    pred_weapon = predictions != LABEL_NONE
    true_weapon = labels != LABEL_NONE
    return ConfusionMatrix(
        tp=int(np.sum(pred_weapon & true_weapon)),
        fp=int(np.sum(pred_weapon & ~true_weapon)),
        fn=int(np.sum(~pred_weapon & true_weapon)),
        tn=int(np.sum(~pred_weapon & ~true_weapon)),
    )


def accuracy(cm: ConfusionMatrix) -> Optional[float]:
    """(TP + TN) / (TP + TN + FP + FN); None when no samples."""
    if cm.total == 0:
        return None
    return (cm.tp + cm.tn) / cm.total


def precision(cm: ConfusionMatrix) -> Optional[float]:
    """TP / (TP + FP); None when nothing was predicted positive."""
    if cm.tp + cm.fp == 0:
        return None
    return cm.tp / (cm.tp + cm.fp)


def sensitivity(cm: ConfusionMatrix) -> Optional[float]:
    """TP / (TP + FN); None when no positives exist.  Equals recall."""
    if cm.tp + cm.fn == 0:
        return None
    return cm.tp / (cm.tp + cm.fn)


@dataclass(frozen=True)
class MetricsReport:
    confusion: ConfusionMatrix
    accuracy: Optional[float]
    precision: Optional[float]
    sensitivity: Optional[float]
    mean_inference_seconds: float
    model_bytes: int

    @classmethod
    def from_confusion(
        cls, cm: ConfusionMatrix, mean_inference_seconds: float = 0.0, model_bytes: int = 0
    ) -> "MetricsReport":
        return cls(
            confusion=cm,
            accuracy=accuracy(cm),
            precision=precision(cm),
            sensitivity=sensitivity(cm),
            mean_inference_seconds=mean_inference_seconds,
            model_bytes=model_bytes,
        )

    def to_dict(self) -> dict:
        return {
            "confusion": self.confusion.to_dict(),
            "accuracy": self.accuracy,
            "precision": self.precision,
            "sensitivity": self.sensitivity,
            "mean_inference_seconds": self.mean_inference_seconds,
            "model_bytes": self.model_bytes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def evaluate(ensemble: Ensemble, test_set: Dataset, model_bytes: Optional[int] = None) -> MetricsReport:
    """Run detection over a test set and report confusion, metrics, and cost.

    ``model_bytes`` defaults to the size of the serialized ensemble.
    """
    if len(test_set) == 0:
        raise ValueError("cannot evaluate on an empty test set")
    predictions = []
    durations = []
    for sample in test_set:
        start = time.perf_counter()
        try:
            result = detect(ensemble, sample.image)
        except PipelineError as exc:
            raise type(exc)(f"sample {sample.id!r}: {exc}") from exc
        durations.append(time.perf_counter() - start)
        predictions.append(result.class_index)
    cm = confusion(predictions, test_set.labels())
    if model_bytes is None:
        model_bytes = len(serialize_ensemble(ensemble))
    return MetricsReport.from_confusion(
        cm, mean_inference_seconds=float(np.mean(durations)), model_bytes=model_bytes
    )


def _fmt(value: Optional[float]) -> str:
    return "undef" if value is None else f"{value:.4f}"


def format_metrics_table(named_reports) -> str:
    """Aligned text table: metric rows by model columns, ensemble last.

    ``named_reports`` is a sequence of (column name, MetricsReport).
    """
    named_reports = list(named_reports)
    if not named_reports:
        raise ValueError("nothing to tabulate")
    headers = ["Metric"] + [name for name, _ in named_reports]
    rows = [
        ["Accuracy"] + [_fmt(r.accuracy) for _, r in named_reports],
        ["Precision"] + [_fmt(r.precision) for _, r in named_reports],
        ["Sensitivity"] + [_fmt(r.sensitivity) for _, r in named_reports],
    ]
    widths = [max(len(headers[c]), *(len(row[c]) for row in rows)) for c in range(len(headers))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths))]
    for row in rows:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)))
    return "\n".join(lines) + "\n"
