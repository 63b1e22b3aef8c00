"""Confusion matrices and precision / recall / F1 reports."""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np


def confusion(true_labels, predicted_labels, k: int) -> np.ndarray:
    """``M[i, j]`` counts samples with true class ``i`` predicted as ``j``."""
    t = np.asarray(true_labels, dtype=np.int64)
    p = np.asarray(predicted_labels, dtype=np.int64)
    if t.shape != p.shape:
        raise ValueError(f"label arrays differ in length: {t.shape} vs {p.shape}")
    for name, arr in (("true", t), ("predicted", p)):
        if arr.size and (arr.min() < 0 or arr.max() >= k):
            raise ValueError(f"{name} label out of range [0, {k})")
    m = np.zeros((k, k), dtype=np.int64)
    np.add.at(m, (t, p), 1)
    return m


def _ratio(num: int, den: int) -> Fraction:
    return Fraction(num, den) if den else Fraction(0)


@dataclass
class EvalReport:
    classes: list[str]
    matrix: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    degenerate: list[str]
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float

    def to_record(self) -> dict:
        return {
            "classes": list(self.classes),
            "confusion": self.matrix.tolist(),
            "per_class": {
                c: {"precision": float(self.precision[i]), "recall": float(self.recall[i]),
                    "f1": float(self.f1[i]), "support": int(self.support[i])}
                for i, c in enumerate(self.classes)
            },
            "degenerate": list(self.degenerate),
            "accuracy": self.accuracy,
            "macro": {"precision": self.macro_precision, "recall": self.macro_recall, "f1": self.macro_f1},
            "weighted": {"precision": self.weighted_precision, "recall": self.weighted_recall,
                         "f1": self.weighted_f1},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_record(), indent=2, sort_keys=True)

    def render(self) -> str:
        width = max(12, max(len(c) for c in self.classes) + 2)
        head = f"{'class':<{width}}{'prec':>8}{'recall':>8}{'f1':>8}{'support':>9}"
        lines = [head, "-" * len(head)]
        for i, c in enumerate(self.classes):
            flag = " *" if c in self.degenerate else ""
            lines.append(f"{c:<{width}}{self.precision[i]:>8.4f}{self.recall[i]:>8.4f}"
                         f"{self.f1[i]:>8.4f}{int(self.support[i]):>9d}{flag}")
        lines.append("-" * len(head))
        total = int(self.support.sum())
        lines.append(f"{'macro':<{width}}{self.macro_precision:>8.4f}{self.macro_recall:>8.4f}"
                     f"{self.macro_f1:>8.4f}{total:>9d}")
        lines.append(f"{'weighted':<{width}}{self.weighted_precision:>8.4f}{self.weighted_recall:>8.4f}"
                     f"{self.weighted_f1:>8.4f}{total:>9d}")
        lines.append(f"accuracy {self.accuracy:.4f}")
        if self.degenerate:
            lines.append("* zero support or zero predictions; scores set to 0")
        return "\n".join(lines)

    def confusion_csv(self) -> str:
        rows = ["true\\pred," + ",".join(self.classes)]
        for c, row in zip(self.classes, self.matrix):
            rows.append(c + "," + ",".join(str(int(v)) for v in row))
        return "\n".join(rows) + "\n"


def prf(matrix, classes: Sequence[str] | None = None) -> EvalReport:
    """Per-class and aggregate scores from a confusion matrix (rows = true).

    Scores are computed in exact rational arithmetic and rounded once, so
    identities such as accuracy == weighted recall hold bit for bit.
    """
    m = np.asarray(matrix, dtype=np.int64)
    k = m.shape[0]
    total = int(m.sum())
    if total == 0:
        raise ValueError("confusion matrix is empty")
    classes = list(classes) if classes is not None else [str(i) for i in range(k)]
    tp = [int(m[i, i]) for i in range(k)]
    predicted = [int(v) for v in m.sum(axis=0)]
    support = [int(v) for v in m.sum(axis=1)]
    precision = [_ratio(tp[i], predicted[i]) for i in range(k)]
    recall = [_ratio(tp[i], support[i]) for i in range(k)]
    f1 = [_ratio(2 * tp[i], predicted[i] + support[i]) for i in range(k)]
    degenerate = [classes[i] for i in range(k) if predicted[i] == 0 or support[i] == 0]

    def macro(scores):
        return float(sum(scores, Fraction(0)) / k)

    def weighted(scores):
        return float(sum((Fraction(support[i], total) * scores[i] for i in range(k)), Fraction(0)))

    def arr(scores):
        return np.array([float(s) for s in scores])

    return EvalReport(
        classes=classes,
        matrix=m,
        precision=arr(precision),
        recall=arr(recall),
        f1=arr(f1),
        support=np.array(support, dtype=np.int64),
        degenerate=degenerate,
        accuracy=float(Fraction(sum(tp), total)),
        macro_precision=macro(precision),
        macro_recall=macro(recall),
        macro_f1=macro(f1),
        weighted_precision=weighted(precision),
        weighted_recall=weighted(recall),
        weighted_f1=weighted(f1),
    )


def evaluate(true_labels, predicted_labels, classes: Sequence[str]) -> EvalReport:
    return prf(confusion(true_labels, predicted_labels, len(classes)), classes)
