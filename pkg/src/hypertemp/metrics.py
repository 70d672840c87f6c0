"""Confusion-matrix metrics for four-way temporal relation classification.

Precision and recall leave Vague out of the numerator and out of the
denominators: precision divides by the predictions in the first three
columns, recall by the gold pairs in the first three rows.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .data import LABELS, TempRelLabel


class EmptyEvaluation(ValueError):
    pass


@dataclass
class ConfusionMatrix:
    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (4, 4):
            raise ValueError("confusion matrix must be 4 x 4")
        if np.any(self.counts < 0):
            raise ValueError("confusion matrix entries must be nonnegative")

    @classmethod
    def from_labels(cls, gold: Iterable[TempRelLabel], pred: Iterable[TempRelLabel]) -> ConfusionMatrix:
        cm = np.zeros((4, 4), dtype=np.int64)
        for g, p in zip(gold, pred, strict=True):
            cm[g.index, p.index] += 1
        return cls(cm)

    @classmethod
    def from_indices(cls, gold: np.ndarray, pred: np.ndarray) -> ConfusionMatrix:
        cm = np.zeros((4, 4), dtype=np.int64)
        np.add.at(cm, (np.asarray(gold), np.asarray(pred)), 1)
        return cls(cm)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_json(self) -> dict:
        return {"labels": [lab.value for lab in LABELS], "rows_gold_cols_pred": self.counts.tolist()}


def _ratio(num: float, den: float) -> float:
    return float(num) / float(den) if den > 0 else 0.0


def _f1(p: float, r: float) -> float:
    return 2.0 * p * r / (p + r) if p + r > 0 else 0.0


def compute_metrics(cm: ConfusionMatrix) -> dict[str, float]:
    c = cm.counts
    if cm.total == 0:
        raise EmptyEvaluation("empty evaluation")
    correct3 = c[0, 0] + c[1, 1] + c[2, 2]
    acc = _ratio(np.trace(c), cm.total)
    p = _ratio(correct3, c[:, :3].sum())
    r = _ratio(correct3, c[:3, :].sum())
    return {"accuracy": acc, "precision": p, "recall": r, "f1": _f1(p, r)}


def per_class_metrics(cm: ConfusionMatrix) -> dict[TempRelLabel, dict[str, float]]:
    c = cm.counts
    if cm.total == 0:
        raise EmptyEvaluation("empty evaluation")
    out = {}
    for lab in LABELS:
        k = lab.index
        p = _ratio(c[k, k], c[:, k].sum())
        r = _ratio(c[k, k], c[k, :].sum())
        out[lab] = {"precision": p, "recall": r, "f1": _f1(p, r), "support": int(c[k, :].sum())}
    return out


def format_report(cm: ConfusionMatrix) -> str:
    m = compute_metrics(cm)
    lines = [
        f"{'P':>7} {'R':>7} {'Acc':>7} {'F1':>7}",
        f"{m['precision'] * 100:7.1f} {m['recall'] * 100:7.1f} {m['accuracy'] * 100:7.1f} {m['f1'] * 100:7.1f}",
        "",
        f"{'Relation':<8} {'P':>7} {'R':>7} {'F1':>7} {'n':>6}",
    ]
    for lab, pc in per_class_metrics(cm).items():
        lines.append(f"{lab.short:<8} {pc['precision'] * 100:7.1f} {pc['recall'] * 100:7.1f} "
                     f"{pc['f1'] * 100:7.1f} {pc['support']:6d}")
    lines += ["", "confusion (rows gold, cols predicted): " + " ".join(l.short for l in LABELS)]
    for lab, row in zip(LABELS, cm.counts):
        lines.append(f"{lab.short:<8} " + " ".join(f"{v:6d}" for v in row))
    return "\n".join(lines)
