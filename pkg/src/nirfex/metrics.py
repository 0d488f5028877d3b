"""Classification metrics: accuracy, per-class precision/recall/F1, macro F1.

A class absent from both predictions and labels scores F1 = 0 and still
enters the macro average as long as it is in the configured class list.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class MetricsReport:
    accuracy: float
    macro_f1: float
    precision: np.ndarray  # (M,)
    recall: np.ndarray  # (M,)
    f1: np.ndarray  # (M,)
    confusion: np.ndarray  # (M, M), rows = true class, cols = predicted
    n_samples: int

    def table(self, class_names=None) -> str:
        m = self.confusion.shape[0]
        names = class_names or [f"class{i}" for i in range(m)]
        width = max(len(str(n)) for n in names)
        lines = [
            f"samples {self.n_samples}  accuracy {self.accuracy:.4f}  macro F1 {self.macro_f1:.4f}",
            f"{'class':<{width}}  precision  recall  f1",
        ]
        for i, name in enumerate(names):
            lines.append(
                f"{name:<{width}}  {self.precision[i]:9.4f}  {self.recall[i]:6.4f}  {self.f1[i]:.4f}"
            )
        return "\n".join(lines)

    def csv(self, class_names=None) -> str:
        m = self.confusion.shape[0]
        names = class_names or [f"class{i}" for i in range(m)]
        lines = ["metric,class,value"]
        lines.append(f"accuracy,,{self.accuracy!r}")
        lines.append(f"macro_f1,,{self.macro_f1!r}")
        for i, name in enumerate(names):
            lines.append(f"precision,{name},{self.precision[i]!r}")
            lines.append(f"recall,{name},{self.recall[i]!r}")
            lines.append(f"f1,{name},{self.f1[i]!r}")
        return "\n".join(lines) + "\n"


def compute_metrics(y_true, y_pred, n_classes: int) -> MetricsReport:
    y_true = np.asarray(y_true, dtype=int)
    y_pred = np.asarray(y_pred, dtype=int)
    if y_true.shape != y_pred.shape:
        raise ValueError("label and prediction lengths differ")
    if y_true.size == 0:
        raise ValueError("cannot compute metrics on an empty set")
    if y_true.min() < 0 or y_true.max() >= n_classes or y_pred.min() < 0 or y_pred.max() >= n_classes:
        raise ValueError(f"labels outside [0, {n_classes})")

    confusion = np.zeros((n_classes, n_classes), dtype=int)
    np.add.at(confusion, (y_true, y_pred), 1)

    tp = np.diag(confusion).astype(float)
    pred_count = confusion.sum(axis=0).astype(float)
    true_count = confusion.sum(axis=1).astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(pred_count > 0, tp / pred_count, 0.0)
        recall = np.where(true_count > 0, tp / true_count, 0.0)
        denom = precision + recall
        f1 = np.where(denom > 0, 2 * precision * recall / denom, 0.0)

    return MetricsReport(
        accuracy=float(tp.sum() / confusion.sum()),
        macro_f1=float(f1.mean()),
        precision=precision,
        recall=recall,
        f1=f1,
        confusion=confusion,
        n_samples=int(y_true.size),
    )
