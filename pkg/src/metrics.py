"""
Segmentation metrics (pixel accuracy, per-class and mean IoU) from a confusion matrix.
"""
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from src.errors import DataValidationError, DimensionError
from src.functional import IGNORE_INDEX


@dataclass
class SegMetrics:
    """
    pix_acc and mean_iou are in [0, 1]. per_class_iou is NaN for classes absent
    from both prediction and ground truth. confusion rows are ground truth.
    """
    pix_acc: float
    per_class_iou: np.ndarray
    mean_iou: float
    confusion: np.ndarray
    no_valid_pixels: bool = False

    def as_record(self) -> dict:
        return {"pix_acc": self.pix_acc, "mean_iou": self.mean_iou,
                "per_class_iou": [None if np.isnan(v) else float(v) for v in self.per_class_iou]}


def confusion_matrix(pred: np.ndarray, label: np.ndarray, num_classes: int,
                     ignore_index: int = IGNORE_INDEX) -> np.ndarray:
    pred = np.asarray(pred)
    label = np.asarray(label)
    if pred.shape != label.shape:
        raise DimensionError("compute_metrics", pred.shape, label.shape)
    valid = label != ignore_index
    gt = label[valid].astype(np.int64)
    pr = pred[valid].astype(np.int64)
    if gt.size and (gt.min() < 0 or gt.max() >= num_classes or pr.min() < 0 or pr.max() >= num_classes):
        raise DataValidationError(f"Class indices must lie in [0, {num_classes}) or equal {ignore_index}")
    counts = np.bincount(num_classes * gt + pr, minlength=num_classes ** 2)
    return counts.reshape(num_classes, num_classes)


def metrics_from_confusion(confusion: np.ndarray) -> SegMetrics:
    confusion = np.asarray(confusion, dtype=np.int64)
    total = int(confusion.sum())
    if total == 0:
        per_class = np.full(confusion.shape[0], np.nan)
        return SegMetrics(0.0, per_class, 0.0, confusion, no_valid_pixels=True)
    tp = np.diag(confusion)
    union = confusion.sum(axis=0) + confusion.sum(axis=1) - tp
    with np.errstate(divide="ignore", invalid="ignore"):
        per_class = np.where(union > 0, tp / np.maximum(union, 1), np.nan)
    present = union > 0
    return SegMetrics(
        pix_acc=float(tp.sum() / total),
        per_class_iou=per_class,
        mean_iou=float(per_class[present].mean()),
        confusion=confusion,
    )


def compute_metrics(pred: np.ndarray, label: np.ndarray, num_classes: int,
                    ignore_index: int = IGNORE_INDEX) -> SegMetrics:
    """
    Args:
        pred: Predicted class map (any shape).
        label: Ground-truth class map of the same shape; ignore_index pixels are skipped.
        num_classes: K.

    Returns:
        SegMetrics; all zeros with no_valid_pixels set when every pixel is ignored.
    """
    return metrics_from_confusion(confusion_matrix(pred, label, num_classes, ignore_index))


def merge_confusions(confusions: Iterable[np.ndarray]) -> np.ndarray:
    confusions = list(confusions)
    if not confusions:
        raise DataValidationError("No confusion matrices to merge")
    return np.sum(np.stack(confusions), axis=0)
