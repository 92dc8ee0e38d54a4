"""Binary classification metrics; the positive class is agitation (label 1)."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np


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

    def __add__(self, other: ConfusionMatrix) -> ConfusionMatrix:
        return ConfusionMatrix(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)


def confusion(predictions, labels) -> ConfusionMatrix:
    pred = np.asarray(predictions, dtype=int)
    lab = np.asarray(labels, dtype=int)
    if pred.shape != lab.shape:
        raise ValueError(f"predictions and labels differ in length: {pred.shape} vs {lab.shape}")
    if pred.size == 0:
        raise ValueError("cannot build a confusion matrix from no predictions")
    return ConfusionMatrix(
        tp=int(np.sum((pred == 1) & (lab == 1))),
        fp=int(np.sum((pred == 1) & (lab == 0))),
        fn=int(np.sum((pred == 0) & (lab == 1))),
        tn=int(np.sum((pred == 0) & (lab == 0))),
    )


def _ratio(num, den, name, undefined):
    if den == 0:
        undefined.append(name)
        return 0.0
    return num / den


def basic_metrics(cm: ConfusionMatrix) -> dict:
    """Accuracy, precision, recall, F1 and specificity.

    Zero-denominator ratios come back as 0 and are listed under ``undefined``.
    """
    if cm.total == 0:
        raise ValueError("empty confusion matrix")
    undefined: list[str] = []
    precision = _ratio(cm.tp, cm.tp + cm.fp, "precision", undefined)
    recall = _ratio(cm.tp, cm.tp + cm.fn, "recall", undefined)
    specificity = _ratio(cm.tn, cm.tn + cm.fp, "specificity", undefined)
    f1 = _ratio(2 * precision * recall, precision + recall, "f1", undefined)
    return {
        "accuracy": (cm.tp + cm.tn) / cm.total,
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "specificity": specificity,
        "undefined": undefined,
    }


def roc_auc(scores, labels) -> float:
    """Probability a random positive outscores a random negative (ties count half).

    Computed from average ranks (Mann-Whitney U).
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=int)
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative")
    order = np.argsort(s, kind="mergesort")
    sorted_s = s[order]
    ranks = np.empty(len(s))
    # average 1-based ranks over runs of tied scores
    boundaries = np.flatnonzero(np.diff(sorted_s)) + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries, [len(s)]])
    avg = (starts + ends + 1) / 2.0
    ranks[order] = np.repeat(avg, ends - starts)
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def youden_j(sensitivity: float, specificity: float) -> float:
    return sensitivity + specificity - 1.0


@dataclass
class MetricsReport:
    cm: ConfusionMatrix
    accuracy: float
    precision: float
    recall: float
    f1: float
    specificity: float
    auc: float
    youden_j: float
    undefined: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(d.pop("cm"))
        return d


def evaluate(predictions, scores, labels) -> MetricsReport:
    """Full metric suite; AUC is reported as 0 (flagged) for single-class labels."""
    cm = confusion(predictions, labels)
    m = basic_metrics(cm)
    undefined = list(m["undefined"])
    try:
        auc = roc_auc(scores, labels)
    except ValueError:
        auc = 0.0
        undefined.append("auc")
    return MetricsReport(
        cm=cm,
        accuracy=m["accuracy"],
        precision=m["precision"],
        recall=m["recall"],
        f1=m["f1"],
        specificity=m["specificity"],
        auc=auc,
        youden_j=youden_j(m["recall"], m["specificity"]),
        undefined=undefined,
    )


def empty_report() -> MetricsReport:
    """Placeholder for a split that received no samples."""
    return MetricsReport(
        cm=ConfusionMatrix(0, 0, 0, 0), accuracy=0.0, precision=0.0, recall=0.0, f1=0.0,
        specificity=0.0, auc=0.0, youden_j=0.0, undefined=["empty"],
    )
