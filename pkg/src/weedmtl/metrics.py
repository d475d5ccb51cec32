"""Evaluation metrics for segmentation, regression, and classification.

Segmentation scores come from one accumulated confusion matrix (rows are
ground truth, columns are predictions). Mean IoU / F1 average only over
classes that appear in the ground truth or the predictions, so absent
classes never dilute the mean. R-squared is undefined for constant
targets and is reported as NaN with a flag rather than a made-up value.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DimensionError


def confusion_matrix(pred: np.ndarray, gt: np.ndarray, num_classes: int) -> np.ndarray:
    pred = np.asarray(pred).reshape(-1)
    gt = np.asarray(gt).reshape(-1)
    if pred.shape != gt.shape:
        raise DimensionError(f"pred has {pred.size} entries but gt has {gt.size}")
    for name, arr in (("pred", pred), ("gt", gt)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise DataError(f"{name} labels outside [0, {num_classes})")
    idx = gt.astype(np.int64) * num_classes + pred.astype(np.int64)
    counts = np.bincount(idx, minlength=num_classes * num_classes)
    return counts.reshape(num_classes, num_classes)


def segmentation_scores(cm: np.ndarray) -> dict:
    cm = np.asarray(cm, dtype=np.float64)
    tp = np.diag(cm)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    present = (tp + fp + fn) > 0
    iou = np.full(cm.shape[0], np.nan)
    f1 = np.full(cm.shape[0], np.nan)
    iou[present] = tp[present] / (tp + fp + fn)[present]
    f1[present] = 2.0 * tp[present] / (2.0 * tp + fp + fn)[present]
    total = cm.sum()
    return {
        "pixel_accuracy": float(tp.sum() / total) if total else float("nan"),
        "mean_iou": float(np.mean(iou[present])) if present.any() else float("nan"),
        "mean_f1": float(np.mean(f1[present])) if present.any() else float("nan"),
        "per_class_iou": [float(v) for v in iou],
        "per_class_f1": [float(v) for v in f1],
        "classes_scored": int(present.sum()),
    }


def regression_scores(pred: np.ndarray, target: np.ndarray,
                      thresholds_cm: tuple[float, ...] = (1.0, 2.0, 5.0)) -> dict:
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    target = np.asarray(target, dtype=np.float64).reshape(-1)
    if pred.shape != target.shape:
        raise DimensionError(f"pred has {pred.size} entries but target has {target.size}")
    if pred.size == 0:
        raise DataError("regression metrics need at least one sample")
    err = pred - target
    ss_res = float(np.sum(err * err))
    ss_tot = float(np.sum((target - target.mean()) ** 2))
    r2_defined = ss_tot > 0.0
    out = {
        "mae": float(np.mean(np.abs(err))),
        "rmse": float(np.sqrt(np.mean(err * err))),
        "max_error": float(np.max(np.abs(err))),
        "r2": 1.0 - ss_res / ss_tot if r2_defined else float("nan"),
        "r2_defined": r2_defined,
    }
    for tau in thresholds_cm:
        out[f"within_{tau:g}cm"] = float(np.mean(np.abs(err) <= tau))
    return out


def classification_scores(pred: np.ndarray, target: np.ndarray, num_classes: int) -> dict:
    cm = confusion_matrix(pred, target, num_classes)
    tp = np.diag(cm).astype(np.float64)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    in_gt = cm.sum(axis=1) > 0
    f1 = np.full(num_classes, np.nan)
    scored = (tp + fp + fn) > 0
    f1[scored] = 2.0 * tp[scored] / (2.0 * tp + fp + fn)[scored]
    total = cm.sum()
    return {
        "accuracy": float(tp.sum() / total) if total else float("nan"),
        "macro_f1": float(np.mean(f1[in_gt])) if in_gt.any() else float("nan"),
        "per_class_f1": [float(v) for v in f1],
        "confusion_matrix": cm.tolist(),
    }


@dataclass
class MetricsReport:
    """Per-task metric blocks; absent tasks stay None."""
    segmentation: dict | None = None
    height: dict | None = None
    week: dict | None = None
    num_samples: int = 0
    notes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "num_samples": self.num_samples,
            "segmentation": self.segmentation,
            "height": self.height,
            "week": self.week,
            "notes": self.notes,
        }

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)
