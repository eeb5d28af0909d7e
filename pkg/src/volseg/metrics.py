"""Dice Similarity Coefficient evaluation and the segmentation training loss.

The DSC for a class is ``2|A n B| / (|A| + |B|)`` over predicted and
ground-truth voxel sets. Reports list the five organs in the fixed order
``spleen, right kidney, left kidney, liver, bowel`` followed by their mean.
When an organ is absent from both volumes the ratio is the undefined ``0/0``;
it is reported as ``1.0`` and flagged so aggregations can exclude it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import tensor as F
from .data.volume import CLASS_IDS, NUM_CLASSES, REPORT_ORDER, LabelVolume
from .errors import DimensionError

__all__ = [
    "CSV_HEADER",
    "DiceReport",
    "dice",
    "dice_report",
    "soft_dice_loss",
    "cross_entropy",
    "segmentation_loss",
]

CSV_HEADER = "model,spleen,right_kidney,left_kidney,liver,bowel,average"


def _label_array(v) -> np.ndarray:
    arr = v.data if isinstance(v, LabelVolume) else np.asarray(v)
    if arr.ndim != 3:
        raise DimensionError(f"labels must be 3-d, got shape {tuple(arr.shape)}")
    return arr


def _paired(pred, gt):
    a, b = _label_array(pred), _label_array(gt)
    if a.shape != b.shape:
        raise DimensionError(f"label extents differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    return a, b


def _counts(pred: np.ndarray, gt: np.ndarray):
    """Exact per-class (intersection, |pred|, |gt|) via joint histogramming."""
    joint = pred.astype(np.int64) * NUM_CLASSES + gt.astype(np.int64)
    joint_counts = np.bincount(joint.reshape(-1), minlength=NUM_CLASSES * NUM_CLASSES)
    inter = joint_counts[np.arange(NUM_CLASSES) * (NUM_CLASSES + 1)]
    size_a = np.bincount(pred.reshape(-1), minlength=NUM_CLASSES)[:NUM_CLASSES]
    size_b = np.bincount(gt.reshape(-1), minlength=NUM_CLASSES)[:NUM_CLASSES]
    return inter, size_a, size_b


def dice(pred, gt, class_id: int) -> float:
    """DSC of one class; ``1.0`` when the class is absent from both inputs."""
    a, b = _paired(pred, gt)
    inter, size_a, size_b = _counts(a, b)
    total = int(size_a[class_id] + size_b[class_id])
    if total == 0:
        return 1.0
    return 2.0 * int(inter[class_id]) / total


@dataclass(frozen=True)
class DiceReport:
    """Per-organ DSC in report order plus exact voxel counts."""

    per_class: tuple  # DSC per organ, ordered like REPORT_ORDER
    counts: dict  # organ -> (intersection, |pred|, |gt|)
    both_empty: tuple  # organs scored 1.0 by the empty/empty convention

    @property
    def organs(self) -> dict:
        return dict(zip(REPORT_ORDER, self.per_class))

    @property
    def mean(self) -> float:
        return float(np.mean(self.per_class))

    @property
    def mean_present(self) -> float:
        """Mean over organs present in at least one input; NaN if none are."""
        kept = [d for organ, d in zip(REPORT_ORDER, self.per_class) if organ not in self.both_empty]
        return float(np.mean(kept)) if kept else float("nan")

    def csv_row(self, model: str) -> str:
        values = ",".join(f"{d:.4f}" for d in self.per_class)
        return f"{model},{values},{self.mean:.4f}"


def dice_report(pred, gt) -> DiceReport:
    """DSC for every organ class, in report order, with exact counts."""
    a, b = _paired(pred, gt)
    inter, size_a, size_b = _counts(a, b)
    values, counts, empty = [], {}, []
    for organ in REPORT_ORDER:
        c = CLASS_IDS[organ]
        counts[organ] = (int(inter[c]), int(size_a[c]), int(size_b[c]))
        total = counts[organ][1] + counts[organ][2]
        if total == 0:
            values.append(1.0)
            empty.append(organ)
        else:
            values.append(2.0 * counts[organ][0] / total)
    return DiceReport(tuple(values), counts, tuple(empty))


def _one_hot(labels: np.ndarray, classes: int, dtype) -> np.ndarray:
    return np.stack([(labels == c) for c in range(classes)], axis=1).astype(dtype)


def _check_logit_shapes(logits, labels) -> None:
    if logits.ndim != labels.ndim + 1 or logits.shape[0] != labels.shape[0] or tuple(
        logits.shape[2:]
    ) != tuple(labels.shape[1:]):
        raise DimensionError(
            f"logits {tuple(logits.shape)} do not match labels {tuple(labels.shape)}; "
            "expected (N, classes, ...) against (N, ...)"
        )


def soft_dice_loss(logits, labels, smooth: float = 1e-5):
    """``1 - mean_c softDSC_c`` with per-class sums over batch and space."""
    logits = F.as_tensor(logits)
    labels = np.asarray(labels)
    _check_logit_shapes(logits, labels)
    onehot = _one_hot(labels, logits.shape[1], logits.dtype)
    p = F.softmax(logits, axis=1)
    dims = (0,) + tuple(range(2, logits.ndim))
    inter = (p * onehot).sum(axis=dims)
    denom = p.sum(axis=dims) + onehot.sum(axis=dims)
    dsc = (inter * 2.0 + smooth) / (denom + smooth)
    return 1.0 - dsc.mean()


def cross_entropy(logits, labels):
    """Voxel-wise cross-entropy against integer labels."""
    logits = F.as_tensor(logits)
    labels = np.asarray(labels)
    _check_logit_shapes(logits, labels)
    onehot = _one_hot(labels, logits.shape[1], logits.dtype)
    logp = F.log_softmax(logits, axis=1)
    return -((logp * onehot).sum(axis=1)).mean()


def segmentation_loss(logits, labels, smooth: float = 1e-5):
    """Equal-weight mean of the soft-Dice and cross-entropy terms."""
    return (soft_dice_loss(logits, labels, smooth) + cross_entropy(logits, labels)) * 0.5
