"""Late-fusion toolkit for semantic segmentation probability maps."""

from .core import (
    SIMPLEX_TOL,
    ClassSet,
    Decision,
    FusedScoreMap,
    LabelMask,
    ModelStack,
    ProbMap,
    argmax_decide,
    softmax,
    stack_models,
    validate_probmap,
)
from .errors import CytoFuseError, FormatError, ParseError, ValidationError
from .metrics import ConfusionMatrix, EvalReport, accumulate, iou_per_class, mean_iou, pixel_accuracy
from .rules import (
    COMPARISON_RULES,
    RS_MAX,
    FusionRule,
    fuse,
    fuse_average,
    fuse_borda,
    fuse_fuzzy_rank,
    fuse_geometric,
    fuse_majority,
    fuse_max,
    fuse_median,
    fuse_min,
    fuse_scores,
    membership_scores,
)

__version__ = "0.1.0"

__all__ = [
    "SIMPLEX_TOL",
    "RS_MAX",
    "COMPARISON_RULES",
    "ClassSet",
    "ConfusionMatrix",
    "CytoFuseError",
    "Decision",
    "EvalReport",
    "FormatError",
    "FusedScoreMap",
    "FusionRule",
    "LabelMask",
    "ModelStack",
    "ParseError",
    "ProbMap",
    "ValidationError",
    "accumulate",
    "argmax_decide",
    "fuse",
    "fuse_average",
    "fuse_borda",
    "fuse_fuzzy_rank",
    "fuse_geometric",
    "fuse_majority",
    "fuse_max",
    "fuse_median",
    "fuse_min",
    "fuse_scores",
    "iou_per_class",
    "mean_iou",
    "membership_scores",
    "pixel_accuracy",
    "softmax",
    "stack_models",
    "validate_probmap",
]
