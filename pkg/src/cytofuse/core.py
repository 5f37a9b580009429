"""Core tensor types shared by every fusion rule.

Probability maps are stored as float32 (the on-disk format) while all
fusion arithmetic and decisions run in float64.  Every type is immutable
after construction, so instances are safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .errors import ValidationError

# Tolerance on |sum(p) - 1| per pixel: float32 round-trips of softmax
# outputs drift by more than strict equality allows.
SIMPLEX_TOL = 1e-4


class Decision(Enum):
    """Which direction of a fused score selects the winning class."""

    MAXIMIZE = "maximize"
    MINIMIZE = "minimize"


@dataclass(frozen=True)
class ClassSet:
    """Class count, names, and an optional rendering palette."""

    num_classes: int
    names: tuple[str, ...]
    palette: tuple[tuple[int, int, int], ...] | None = None

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValidationError(f"need at least 2 classes, got {self.num_classes}")
        if self.num_classes > 256:
            raise ValidationError("the mask format caps classes at 256")
        object.__setattr__(self, "names", tuple(self.names))
        if len(self.names) != self.num_classes:
            raise ValidationError(
                f"expected {self.num_classes} class names, got {len(self.names)}"
            )
        if len(set(self.names)) != len(self.names):
            raise ValidationError("class names must be distinct")
        if self.palette is not None:
            palette = tuple(tuple(int(v) for v in rgb) for rgb in self.palette)
            object.__setattr__(self, "palette", palette)
            if len(palette) != self.num_classes:
                raise ValidationError(
                    f"palette has {len(palette)} entries, expected {self.num_classes}"
                )
            if len(set(palette)) != len(palette):
                raise ValidationError("palette colors must be distinct")
            for rgb in palette:
                if len(rgb) != 3 or any(v < 0 or v > 255 for v in rgb):
                    raise ValidationError(f"bad RGB triple {rgb!r}")


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ProbMap:
    """H x W x C per-pixel class probabilities (float32, clamped to [0, 1])."""

    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ValidationError(f"probability map must be rank 3, got {self.data.ndim}")
        if self.data.dtype != np.float32:
            raise ValidationError(f"probability map stores float32, got {self.data.dtype}")
        _freeze(self.data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def num_classes(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "ProbMap":
        """Validate an H x W x C array and ingest it (clamping to [0, 1])."""
        arr = np.asarray(arr)
        if arr.ndim != 3:
            raise ValidationError(f"probability map must be rank 3, got {arr.ndim}")
        report = validate_probmap(arr)
        if not report.ok:
            raise ValidationError(report.describe())
        clamped = np.clip(arr.astype(np.float64), 0.0, 1.0).astype(np.float32)
        return cls(np.ascontiguousarray(clamped))


@dataclass(frozen=True)
class LabelMask:
    """H x W class-index image (uint8; the mask format caps C at 256)."""

    labels: np.ndarray

    def __post_init__(self):
        if self.labels.ndim != 2:
            raise ValidationError(f"label mask must be rank 2, got {self.labels.ndim}")
        if self.labels.dtype != np.uint8:
            labels = np.asarray(self.labels)
            if not np.issubdtype(labels.dtype, np.integer):
                raise ValidationError(f"labels must be integers, got {labels.dtype}")
            if labels.size and (labels.min() < 0 or labels.max() > 255):
                raise ValidationError("labels must fit in [0, 255]")
            object.__setattr__(self, "labels", np.ascontiguousarray(labels, dtype=np.uint8))
        _freeze(self.labels)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    def check_labels(self, num_classes: int) -> None:
        if self.labels.size and int(self.labels.max()) >= num_classes:
            bad = int(self.labels.max())
            raise ValidationError(f"label {bad} out of range for {num_classes} classes")


@dataclass(frozen=True)
class FusedScoreMap:
    """H x W x C fused scores plus the direction that picks the winner."""

    scores: np.ndarray
    decision: Decision

    def __post_init__(self):
        if self.scores.ndim != 3:
            raise ValidationError(f"score map must be rank 3, got {self.scores.ndim}")
        if not np.isfinite(self.scores).all():
            raise ValidationError("fused scores must be finite")
        object.__setattr__(self, "scores", np.ascontiguousarray(self.scores, dtype=np.float64))
        _freeze(self.scores)


@dataclass(frozen=True)
class ModelStack:
    """N aligned probability maps for one image, in manifest order."""

    names: tuple[str, ...]
    maps: tuple[ProbMap, ...]

    def __len__(self) -> int:
        return len(self.maps)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.maps[0].shape

    def tensor(self) -> np.ndarray:
        """The stack as one float64 (N, H, W, C) array, manifest order."""
        return np.stack([m.data for m in self.maps]).astype(np.float64)


@dataclass(frozen=True)
class SimplexReport:
    """Outcome of a probability-map validation pass."""

    checked_pixels: int
    violations: tuple[tuple[tuple[int, int], float], ...] = field(default_factory=tuple)

    @property
    def ok(self) -> bool:
        return not self.violations

    def describe(self, limit: int = 10) -> str:
        if self.ok:
            return f"ok ({self.checked_pixels} pixels)"
        shown = ", ".join(
            f"pixel {pix} off by {dev:.6g}" for pix, dev in self.violations[:limit]
        )
        extra = len(self.violations) - min(limit, len(self.violations))
        tail = f" (+{extra} more)" if extra > 0 else ""
        return f"{len(self.violations)} simplex violations: {shown}{tail}"


def softmax(logits, axis: int | None = None) -> np.ndarray:
    """Numerically safe softmax (max-subtraction), float64 output.

    With no axis a 1-D vector is expected; for arrays pass the class axis.
    Order-preserving: the argmax of the input is the argmax of the output.
    """
    x = np.asarray(logits, dtype=np.float64)
    if axis is None:
        if x.ndim != 1:
            raise ValidationError(f"softmax without axis expects a vector, got rank {x.ndim}")
        axis = 0
    if not np.isfinite(x).all():
        idx = tuple(int(v) for v in np.argwhere(~np.isfinite(x))[0])
        pos = idx[0] if len(idx) == 1 else idx
        raise ValidationError(f"non-finite value {x[idx]!r} at index {pos}")
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def validate_probmap(probmap: "ProbMap | np.ndarray") -> SimplexReport:
    """Report-only simplex check; callers decide whether to reject.

    A pixel is flagged when |sum - 1| > SIMPLEX_TOL or any entry falls
    outside [-SIMPLEX_TOL, 1 + SIMPLEX_TOL].  The reported deviation is
    the worst offence of the pixel.
    """
    arr = probmap.data if isinstance(probmap, ProbMap) else np.asarray(probmap)
    data = arr.astype(np.float64, copy=False)
    finite = np.isfinite(data).all(axis=2)
    with np.errstate(invalid="ignore"):
        sum_dev = np.abs(data.sum(axis=2) - 1.0)
        out_low = np.maximum(-data.min(axis=2), 0.0)
        out_high = np.maximum(data.max(axis=2) - 1.0, 0.0)
        out_dev = np.maximum(out_low, out_high)
        bad = (~finite) | (sum_dev > SIMPLEX_TOL) | (out_dev > SIMPLEX_TOL)
    violations = []
    for y, x in np.argwhere(bad):
        if finite[y, x]:
            dev = float(max(sum_dev[y, x], out_dev[y, x]))
        else:
            dev = float("inf")
        violations.append(((int(y), int(x)), dev))
    return SimplexReport(checked_pixels=int(data.shape[0] * data.shape[1]),
                         violations=tuple(violations))


def argmax_decide(scores: FusedScoreMap) -> LabelMask:
    """Pick the winning class per pixel; ties go to the lowest index."""
    if scores.decision is Decision.MINIMIZE:
        labels = np.argmin(scores.scores, axis=2)
    else:
        labels = np.argmax(scores.scores, axis=2)
    return LabelMask(labels.astype(np.uint8))


def stack_models(maps: Sequence[tuple[str, ProbMap]] | Iterable[tuple[str, ProbMap]]) -> ModelStack:
    """Bundle (name, ProbMap) pairs, enforcing shape agreement and order."""
    pairs = list(maps)
    if not pairs:
        raise ValidationError("cannot stack zero models")
    names = tuple(name for name, _ in pairs)
    pmaps = tuple(pm for _, pm in pairs)
    first_name, first = names[0], pmaps[0]
    for name, pm in zip(names[1:], pmaps[1:]):
        if pm.shape != first.shape:
            raise ValidationError(
                f"shape mismatch: model '{first_name}' is {first.shape} "
                f"but model '{name}' is {pm.shape}"
            )
    return ModelStack(names=names, maps=pmaps)
