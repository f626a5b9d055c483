"""Segmentation scoring: confusion counts and intersection-over-union."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UndefinedMetricError


class ConfusionMatrix:
    """C x C int64 counts with ground truth on rows, predictions on columns.

    Points whose ground-truth label equals ``ignore_id`` are dropped before
    counting; predictions must always be valid classes. Shards accumulated
    independently merge by addition.
    """

    def __init__(self, num_classes: int, ignore_id: int = 255):
        if num_classes < 1:
            raise ValueError("need at least one class")
        if 0 <= ignore_id < num_classes:
            raise ValueError("ignore_id must lie outside [0, num_classes)")
        self.num_classes = int(num_classes)
        self.ignore_id = int(ignore_id)
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    def accumulate(self, ground_truth, predictions) -> "ConfusionMatrix":
        gt = np.asarray(ground_truth, dtype=np.int64)
        pred = np.asarray(predictions, dtype=np.int64)
        if gt.shape != pred.shape or gt.ndim != 1:
            raise ValueError(f"label arrays must be 1-D and equal length, got {gt.shape} vs {pred.shape}")
        keep = gt != self.ignore_id
        bad = keep & (
            (gt < 0) | (gt >= self.num_classes) | (pred < 0) | (pred >= self.num_classes)
        )
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise ValueError(
                f"label out of range at index {i}: gt={int(gt[i])} pred={int(pred[i])}"
            )
        flat = gt[keep] * self.num_classes + pred[keep]
        self.counts += np.bincount(flat, minlength=self.num_classes**2).reshape(
            self.num_classes, self.num_classes
        )
        return self

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if (self.num_classes, self.ignore_id) != (other.num_classes, other.ignore_id):
            raise ValueError("cannot merge differently shaped confusion matrices")
        merged = ConfusionMatrix(self.num_classes, self.ignore_id)
        merged.counts = self.counts + other.counts
        return merged

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class MiouResult:
    per_class: np.ndarray  # IoU per class, NaN where the class is absent
    valid: np.ndarray  # False where TP+FP+FN == 0
    miou: float


def miou(cm: ConfusionMatrix, include_absent: bool = False) -> MiouResult:
    """Mean of per-class TP / (TP + FP + FN).

    Absent classes (TP+FP+FN == 0) are excluded from the mean by default and
    reported as NaN; with ``include_absent`` they count as zero instead.
    """
    tp = np.diag(cm.counts).astype(np.float64)
    denom = cm.counts.sum(axis=1) + cm.counts.sum(axis=0) - np.diag(cm.counts)
    valid = denom > 0
    if not valid.any():
        raise UndefinedMetricError("every class is absent; mIoU is undefined")
    per_class = np.full(cm.num_classes, np.nan)
    per_class[valid] = tp[valid] / denom[valid]
    if include_absent:
        mean = float(np.where(valid, per_class, 0.0).mean())
    else:
        mean = float(per_class[valid].mean())
    return MiouResult(per_class=per_class, valid=valid, miou=mean)


def format_report(result: MiouResult, class_names=None) -> str:
    """Human-readable per-class IoU table."""
    names = class_names or [str(i) for i in range(result.per_class.shape[0])]
    width = max(len(n) for n in [*names, "mIoU"])
    lines = []
    for name, iou, ok in zip(names, result.per_class, result.valid):
        value = f"{iou:7.4f}" if ok else " absent"
        lines.append(f"{name:>{width}s}  {value}")
    lines.append(f"{'mIoU':>{width}s}  {result.miou:7.4f}")
    return "\n".join(lines) + "\n"


def format_class_iou_lines(result: MiouResult) -> str:
    """Machine-readable listing: one ``<class> <iou>`` line, then ``miou``."""
    lines = []
    for c, (iou, ok) in enumerate(zip(result.per_class, result.valid)):
        lines.append(f"{c} {iou:.6f}" if ok else f"{c} nan")
    lines.append(f"miou {result.miou:.6f}")
    return "\n".join(lines) + "\n"
