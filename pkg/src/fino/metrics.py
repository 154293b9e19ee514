"""Pixel-count evaluation: confusion counts and derived P/R/F1/IoU.

Dataset-level metrics come from globally accumulated counts, never from
per-tile averaging, so evaluation order and sharding cannot change them.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __add__(self, other):
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.fn + other.fn, self.tn + other.tn)


@dataclass
class MetricsReport:
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    f1: float
    iou: float

    def to_json(self):
        return json.dumps({
            "tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn,
            "precision": self.precision, "recall": self.recall,
            "f1": self.f1, "iou": self.iou,
        })


def confusion(pred, gt) -> ConfusionCounts:
    """Pixel-wise confusion counts of two binary masks of equal shape."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"confusion shape mismatch {pred.shape} vs {gt.shape}")
    for name, arr in (("pred", pred), ("gt", gt)):
        if not np.isin(arr, (0, 1)).all():
            raise ValueError(f"confusion: {name} mask is not binary")
    p = pred.astype(bool)
    g = gt.astype(bool)
    return ConfusionCounts(
        tp=int((p & g).sum()), fp=int((p & ~g).sum()),
        fn=int((~p & g).sum()), tn=int((~p & ~g).sum()))


def metrics(counts: ConfusionCounts) -> MetricsReport:
    """Derive precision/recall/F1/IoU with the perfect-empty convention:
    any 0/0 ratio is 1.0 when tp+fp+fn == 0 (nothing to find, nothing
    predicted) and 0.0 otherwise."""
    tp, fp, fn = counts.tp, counts.fp, counts.fn
    if min(tp, fp, fn, counts.tn) < 0:
        raise ValueError("confusion counts must be non-negative")
    union = tp + fp + fn
    empty_value = 1.0 if union == 0 else 0.0

    def ratio(num, den):
        return num / den if den else empty_value

    precision = ratio(tp, tp + fp)
    recall = ratio(tp, tp + fn)
    f1 = ratio(2.0 * precision * recall, precision + recall)
    iou = ratio(tp, union)
    return MetricsReport(tp=tp, fp=fp, fn=fn, tn=counts.tn,
                         precision=precision, recall=recall, f1=f1, iou=iou)
