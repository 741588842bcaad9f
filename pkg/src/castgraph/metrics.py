"""Classification metrics and learning-curve export."""
from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata


class UndefinedMetricError(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def confusion(pred, truth) -> ConfusionCounts:
    pred = np.asarray(pred, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {truth.shape}")
    return ConfusionCounts(
        tp=int(np.sum(pred & truth)),
        fp=int(np.sum(pred & ~truth)),
        tn=int(np.sum(~pred & ~truth)),
        fn=int(np.sum(~pred & truth)),
    )


def _ratio(num, den) -> float:
    return num / den if den else 0.0


def prf1(c: ConfusionCounts) -> tuple[float, float, float]:
    """Precision, recall, F1; a zero denominator yields 0."""
    p = _ratio(c.tp, c.tp + c.fp)
    r = _ratio(c.tp, c.tp + c.fn)
    f = _ratio(2 * p * r, p + r)
    return p, r, f


def accuracy(c: ConfusionCounts) -> float:
    return _ratio(c.tp + c.tn, c.total)


def roc_auc(scores, labels) -> float:
    """Mann-Whitney form of ROC AUC; ties between classes count one half."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC AUC needs at least one positive and one negative label")
    ranks = rankdata(scores)  # average ranks over ties
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass
class EvalReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    auc: Optional[float]
    counts: ConfusionCounts
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "auc": self.auc,
            "counts": asdict(self.counts),
            "flags": list(self.flags),
        }


def evaluate(scores, labels, threshold: float = 0.5) -> EvalReport:
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    c = confusion(scores >= threshold, labels)
    p, r, f = prf1(c)
    flags = []
    if c.tp + c.fp == 0:
        flags.append("precision_undefined")
    if c.tp + c.fn == 0:
        flags.append("recall_undefined")
    try:
        auc = roc_auc(scores, labels)
    except UndefinedMetricError:
        auc = None
        flags.append("auc_undefined")
    return EvalReport(accuracy(c), p, r, f, auc, c, flags)


CURVE_HEADER = ("epoch", "train_loss", "val_loss", "val_auc")


def emit_curves(history: Sequence[dict]) -> str:
    if not history:
        raise ValueError("empty history")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_HEADER)
    for row in history:
        auc = row.get("val_auc")
        w.writerow(
            [
                row["epoch"],
                repr(float(row["train_loss"])),
                repr(float(row["val_loss"])),
                "" if auc is None else repr(float(auc)),
            ]
        )
    return buf.getvalue()


def read_curves(text: str) -> list[dict]:
    rows = []
    for r in csv.DictReader(io.StringIO(text)):
        rows.append(
            {
                "epoch": int(r["epoch"]),
                "train_loss": float(r["train_loss"]),
                "val_loss": float(r["val_loss"]),
                "val_auc": float(r["val_auc"]) if r["val_auc"] else None,
            }
        )
    return rows
