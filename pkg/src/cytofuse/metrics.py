"""Confusion-matrix evaluation: per-class IoU, mean IoU, pixel accuracy.

IoU is pooled: one confusion matrix accumulates every test pixel, then
per-class IoU is computed once from the pooled counts.  Accumulation is
merge-based (workers each build a private matrix, matrices are summed),
so metrics never depend on image order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .core import LabelMask
from .errors import ValidationError


def percent(value: float) -> str:
    """Format a fraction as a percent with 2 decimals (round-half-to-even)."""
    return f"{value * 100.0:.2f}"


@dataclass(frozen=True)
class ConfusionMatrix:
    """C x C pixel counts; counts[g][p] = pixels of truth g predicted p."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ValidationError(f"confusion matrix must be square, got {counts.shape}")
        if (counts < 0).any():
            raise ValidationError("confusion matrix counts must be nonnegative")
        object.__setattr__(self, "counts", counts)
        counts.setflags(write=False)

    @classmethod
    def zeros(cls, num_classes: int) -> "ConfusionMatrix":
        return cls(np.zeros((num_classes, num_classes), dtype=np.int64))

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes:
            raise ValidationError("cannot merge matrices of different class counts")
        return ConfusionMatrix(self.counts + other.counts)


def accumulate(
    cm: ConfusionMatrix,
    pred: LabelMask,
    gt: LabelMask,
    image_id: str | None = None,
) -> ConfusionMatrix:
    """Return a new matrix with the (gt, pred) pixel counts added."""
    where = f" in image '{image_id}'" if image_id else ""
    if pred.labels.shape != gt.labels.shape:
        raise ValidationError(
            f"shape mismatch{where}: prediction {pred.labels.shape} vs "
            f"ground truth {gt.labels.shape}"
        )
    num_classes = cm.num_classes
    for role, mask in (("prediction", pred), ("ground truth", gt)):
        if mask.labels.size and int(mask.labels.max()) >= num_classes:
            raise ValidationError(
                f"{role} label {int(mask.labels.max())} out of range for "
                f"{num_classes} classes{where}"
            )
    flat = gt.labels.astype(np.int64).ravel() * num_classes + pred.labels.ravel()
    add = np.bincount(flat, minlength=num_classes * num_classes)
    return ConfusionMatrix(cm.counts + add.reshape(num_classes, num_classes))


def iou_per_class(cm: ConfusionMatrix) -> list[float | None]:
    """IoU_k = TP / (TP + FP + FN); None for classes with zero union."""
    counts = cm.counts
    tp = np.diag(counts).astype(np.float64)
    union = counts.sum(axis=0) + counts.sum(axis=1) - np.diag(counts)
    out: list[float | None] = []
    for k in range(cm.num_classes):
        if union[k] == 0:
            out.append(None)
        else:
            out.append(float(tp[k] / union[k]))
    return out


def mean_iou(cm: ConfusionMatrix) -> float:
    """Unweighted mean of the present per-class IoUs of the pooled matrix."""
    present = [v for v in iou_per_class(cm) if v is not None]
    if not present:
        raise ValidationError("empty evaluation: no class has a nonzero union")
    return float(np.mean(present))


def pixel_accuracy(cm: ConfusionMatrix) -> float:
    total = cm.total
    if total == 0:
        raise ValidationError("empty evaluation: no pixels accumulated")
    return float(np.trace(cm.counts) / total)


@dataclass(frozen=True)
class EvalReport:
    """Evaluation summary of one pooled confusion matrix."""

    num_classes: int
    per_class_iou: tuple[float | None, ...]
    mean_iou: float
    pixel_accuracy: float
    evaluated_classes: int

    @classmethod
    def from_confusion(cls, cm: ConfusionMatrix) -> "EvalReport":
        per_class = iou_per_class(cm)
        return cls(
            num_classes=cm.num_classes,
            per_class_iou=tuple(per_class),
            mean_iou=mean_iou(cm),
            pixel_accuracy=pixel_accuracy(cm),
            evaluated_classes=sum(1 for v in per_class if v is not None),
        )

    def to_json(self) -> str:
        doc = {
            "num_classes": self.num_classes,
            "per_class_iou": list(self.per_class_iou),
            "mean_iou": self.mean_iou,
            "pixel_accuracy": self.pixel_accuracy,
            "evaluated_classes": self.evaluated_classes,
        }
        return json.dumps(doc)

    def to_text(self, class_names: tuple[str, ...] | None = None) -> str:
        """Aligned table, percent values with 2 decimals."""
        if class_names is None:
            class_names = tuple(f"class_{k}" for k in range(self.num_classes))
        name_width = max(len("mean IoU"), *(len(n) for n in class_names))
        lines = ["# IoU pooled over all evaluated pixels"]
        for name, iou in zip(class_names, self.per_class_iou):
            value = percent(iou) if iou is not None else "absent"
            lines.append(f"{name:<{name_width}}  {value:>7}")
        lines.append(f"{'mean IoU':<{name_width}}  {percent(self.mean_iou):>7}")
        lines.append(f"{'accuracy':<{name_width}}  {percent(self.pixel_accuracy):>7}")
        return "\n".join(lines)
