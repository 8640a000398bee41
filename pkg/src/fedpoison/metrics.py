"""Confusion matrix, per-class precision/recall/F1 and poisoning attack rate."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from fedpoison.errors import DataError, ShapeError, UndefinedMetricError


def confusion(preds, labels, n_classes: int) -> np.ndarray:
    """``counts[i, j]`` = number of samples with true class ``i`` predicted as ``j``."""
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape or preds.ndim != 1:
        raise ShapeError(f"preds {preds.shape} and labels {labels.shape} differ")
    for name, arr in (("preds", preds), ("labels", labels)):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise DataError(f"{name} contain a class outside [0, {n_classes})")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (labels, preds), 1)
    return cm


@dataclass
class MetricsReport:
    confusion: np.ndarray
    accuracy: float
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    # True where the denominator was empty and the value was set to 0
    precision_undefined: np.ndarray
    recall_undefined: np.ndarray
    class_names: list[str] = field(default_factory=list)
    attack_rate: list[float | None] | None = None

    @property
    def n_classes(self) -> int:
        return self.confusion.shape[0]

    def macro(self) -> dict[str, float]:
        return {
            "precision": float(self.precision.mean()),
            "recall": float(self.recall.mean()),
            "f1": float(self.f1.mean()),
        }

    def with_baseline(self, baseline: "MetricsReport") -> "MetricsReport":
        """Attach per-class poisoning attack rates against a no-attack run.

        Classes whose baseline recall is zero get ``None`` (N/A).
        """
        if baseline.n_classes != self.n_classes:
            raise ShapeError("baseline has a different number of classes")
        rates = []
        for wp, wop in zip(self.recall, baseline.recall):
            try:
                rates.append(poisoning_attack_rate(float(wp), float(wop)))
            except UndefinedMetricError:
                rates.append(None)
        self.attack_rate = rates
        return self

    def to_dict(self) -> dict:
        names = self.class_names or [str(i) for i in range(self.n_classes)]
        d = {
            "accuracy": float(self.accuracy),
            "macro": self.macro(),
            "per_class": [
                {
                    "class": names[i],
                    "precision": float(self.precision[i]),
                    "recall": float(self.recall[i]),
                    "f1": float(self.f1[i]),
                    "precision_undefined": bool(self.precision_undefined[i]),
                    "recall_undefined": bool(self.recall_undefined[i]),
                    "support": int(self.confusion[i].sum()),
                }
                for i in range(self.n_classes)
            ],
            "confusion": self.confusion.tolist(),
        }
        if self.attack_rate is not None:
            for row, rate in zip(d["per_class"], self.attack_rate):
                row["poisoning_attack_rate"] = rate
        return d

    def confusion_csv(self) -> str:
        names = self.class_names or [str(i) for i in range(self.n_classes)]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["true\\pred", *names])
        for name, row in zip(names, self.confusion):
            w.writerow([name, *row.tolist()])
        return buf.getvalue()


def summarize(cm, class_names: list[str] | None = None) -> MetricsReport:
    cm = np.asarray(cm, dtype=np.int64)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1] or cm.shape[0] == 0:
        raise ShapeError(f"confusion matrix must be square and non-empty, got {cm.shape}")
    total = cm.sum()
    if total <= 0:
        raise DataError("confusion matrix holds no samples")
    tp = np.diag(cm).astype(np.float64)
    predicted = cm.sum(axis=0).astype(np.float64)
    actual = cm.sum(axis=1).astype(np.float64)
    p_undef = predicted == 0
    r_undef = actual == 0
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=~p_undef)
    recall = np.divide(tp, actual, out=np.zeros_like(tp), where=~r_undef)
    pr = precision + recall
    f1 = np.divide(2 * precision * recall, pr, out=np.zeros_like(tp), where=pr > 0)
    return MetricsReport(
        confusion=cm,
        accuracy=float(np.trace(cm) / total),
        precision=precision,
        recall=recall,
        f1=f1,
        precision_undefined=p_undef,
        recall_undefined=r_undef,
        class_names=list(class_names) if class_names is not None else [],
    )


def evaluate(preds, labels, n_classes: int, class_names=None) -> MetricsReport:
    return summarize(confusion(preds, labels, n_classes), class_names)


def poisoning_attack_rate(recall_wp: float, recall_wop: float) -> float:
    """``1 - recall_wp / recall_wop``; negative when the attack improved recall."""
    if recall_wop <= 0:
        raise UndefinedMetricError("baseline recall is zero; attack rate is undefined")
    return 1.0 - recall_wp / recall_wop
