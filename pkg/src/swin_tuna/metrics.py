"""Confusion-matrix segmentation metrics: mIoU, mAcc, aAcc."""

from __future__ import annotations

import numpy as np

from .errors import DataError


class ConfusionMatrix:
    """K x K pixel counts; rows are ground truth, columns are predictions."""

    def __init__(self, num_classes: int, ignore_index: int = 255):
        self.num_classes = int(num_classes)
        self.ignore_index = ignore_index
        self.counts = np.zeros((self.num_classes, self.num_classes), dtype=np.int64)

    def update(self, pred, gt) -> "ConfusionMatrix":
        pred = np.asarray(pred).reshape(-1).astype(np.int64)
        gt = np.asarray(gt).reshape(-1).astype(np.int64)
        if pred.shape != gt.shape:
            raise DataError(f"prediction size {pred.size} != label size {gt.size}")
        keep = gt != self.ignore_index
        pred, gt = pred[keep], gt[keep]
        K = self.num_classes
        if gt.size and (gt.min() < 0 or gt.max() >= K or pred.min() < 0 or pred.max() >= K):
            raise DataError(f"class ids outside [0, {K})")
        self.counts += np.bincount(gt * K + pred, minlength=K * K).reshape(K, K)
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        self.counts += other.counts
        return self

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def per_class_iou(self) -> np.ndarray:
        """NaN for classes absent from both labels and predictions."""
        tp = np.diag(self.counts).astype(np.float64)
        union = self.counts.sum(0) + self.counts.sum(1) - tp
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(union > 0, tp / union, np.nan)

    def per_class_acc(self) -> np.ndarray:
        tp = np.diag(self.counts).astype(np.float64)
        support = self.counts.sum(1)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(support > 0, tp / support, np.nan)

    def summary(self) -> dict:
        iou, acc = self.per_class_iou(), self.per_class_acc()
        total = self.total
        return {
            "mIoU": float(np.nanmean(iou)) if np.isfinite(iou).any() else float("nan"),
            "mAcc": float(np.nanmean(acc)) if np.isfinite(acc).any() else float("nan"),
            "aAcc": float(np.trace(self.counts) / total) if total else float("nan"),
            "IoU": iou,
        }


def segmentation_metrics(preds, gts, num_classes: int, ignore_index: int = 255) -> dict:
    cm = ConfusionMatrix(num_classes, ignore_index)
    for p, g in zip(preds, gts):
        cm.update(p, g)
    return cm.summary()
