"""Per-pixel late-fusion rules over a stack of probability maps.

Every rule is a pure function from a ModelStack to a fused score map and
a decided label mask.  All arithmetic runs in float64; reductions over
models always run in manifest order, so results are bit-reproducible on
any thread count.  Ties are broken by the lowest class index everywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import Decision, FusedScoreMap, LabelMask, ModelStack, ProbMap, argmax_decide
from .errors import ValidationError

# Largest per-model fuzzy rank score, attained at p = 0.
RS_MAX = (1.0 - math.tanh(0.5)) * (1.0 - math.exp(-0.5))


class FusionRule(Enum):
    """The eight supported fusion rules (values are the CLI spellings)."""

    FUZZY_RANK = "fuzzy"
    AVERAGE = "avg"
    GEOMETRIC = "geo"
    MEDIAN = "median"
    MAX = "max"
    MIN = "min"
    BORDA = "borda"
    MAJORITY = "majority"

    @classmethod
    def parse(cls, name: str) -> "FusionRule":
        try:
            return cls(name.strip().lower())
        except ValueError:
            known = ", ".join(r.value for r in cls)
            raise ValidationError(f"unknown fusion rule '{name}' (known: {known})") from None


# Column order of the published comparison tables; majority voting is a
# bonus rule and must be requested explicitly.
COMPARISON_RULES = (
    FusionRule.AVERAGE,
    FusionRule.GEOMETRIC,
    FusionRule.MEDIAN,
    FusionRule.MAX,
    FusionRule.MIN,
    FusionRule.BORDA,
    FusionRule.FUZZY_RANK,
)


@dataclass(frozen=True)
class FuzzyRankScores:
    """Membership scores of one model: r1 (tanh), r2 (exponential), rs = r1*r2."""

    r1: np.ndarray
    r2: np.ndarray
    rs: np.ndarray


def _memberships(p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """The two membership functions of a probability array (float64)."""
    d = 0.5 * np.square(p - 1.0)
    r1 = 1.0 - np.tanh(d)
    r2 = -np.expm1(-d)  # 1 - exp(-d) without cancellation; exactly 0 at p = 1
    return r1, r2


def membership_scores(probmap: ProbMap) -> FuzzyRankScores:
    """Per-class fuzzy rank scores of a single model's probability map."""
    p = probmap.data.astype(np.float64)
    r1, r2 = _memberships(p)
    return FuzzyRankScores(r1=r1, r2=r2, rs=r1 * r2)


def _tensor(stack: ModelStack) -> np.ndarray:
    if len(stack) < 1:
        raise ValidationError("cannot fuse an empty model stack")
    return stack.tensor()


def fuse_fuzzy_rank(stack: ModelStack) -> tuple[FusedScoreMap, LabelMask]:
    """Fuzzy rank-based voting.

    Per class k:  fs_k = sum_j (1 - tanh((p-1)^2/2)) * (1 - exp(-(p-1)^2/2))
    with p = P_k^j, summed over models in manifest order.  The winning
    class has the minimum fused score.
    """
    tensor = _tensor(stack)
    r1, r2 = _memberships(tensor)
    fs = np.add.reduce(r1 * r2, axis=0)
    scores = FusedScoreMap(fs, Decision.MINIMIZE)
    return scores, argmax_decide(scores)


def fuse_average(stack: ModelStack) -> tuple[FusedScoreMap, LabelMask]:
    """Arithmetic mean of the class probabilities across models."""
    tensor = _tensor(stack)
    mean = np.add.reduce(tensor, axis=0) / len(stack)
    scores = FusedScoreMap(mean, Decision.MAXIMIZE)
    return scores, argmax_decide(scores)


def fuse_geometric(stack: ModelStack) -> tuple[FusedScoreMap, LabelMask]:
    """Product of the class probabilities across models.

    Computed in linear space; a leading 1/N factor is a positive constant
    per pixel and is dropped because it cannot change the argmax.
    """
    tensor = _tensor(stack)
    prod = np.multiply.reduce(tensor, axis=0)
    scores = FusedScoreMap(prod, Decision.MAXIMIZE)
    return scores, argmax_decide(scores)


def fuse_median(stack: ModelStack) -> tuple[FusedScoreMap, LabelMask]:
    """Median of the class probabilities (even N: mean of the middle two)."""
    tensor = _tensor(stack)
    med = np.median(tensor, axis=0)
    scores = FusedScoreMap(med, Decision.MAXIMIZE)
    return scores, argmax_decide(scores)


def fuse_max(stack: ModelStack) -> tuple[FusedScoreMap, LabelMask]:
    """Maximum class probability across models."""
    scores = FusedScoreMap(np.max(_tensor(stack), axis=0), Decision.MAXIMIZE)
    return scores, argmax_decide(scores)


def fuse_min(stack: ModelStack) -> tuple[FusedScoreMap, LabelMask]:
    """Minimum class probability across models."""
    scores = FusedScoreMap(np.min(_tensor(stack), axis=0), Decision.MAXIMIZE)
    return scores, argmax_decide(scores)


def fuse_borda(stack: ModelStack) -> tuple[FusedScoreMap, LabelMask]:
    """Borda count over per-model descending probability ranks.

    Rank 1 is the most probable class; equal probabilities take ranks in
    ascending class-index order (stable sort), keeping votes integral.
    Per class k the vote is v_k = sum_j (C - rank_k^j).
    """
    tensor = _tensor(stack)
    num_classes = tensor.shape[-1]
    order = np.argsort(-tensor, axis=-1, kind="stable")
    ranks = np.empty(tensor.shape, dtype=np.int64)
    np.put_along_axis(ranks, order, np.arange(1, num_classes + 1), axis=-1)
    votes = np.add.reduce(num_classes - ranks, axis=0).astype(np.float64)
    scores = FusedScoreMap(votes, Decision.MAXIMIZE)
    return scores, argmax_decide(scores)


def _majority_counts(stack: ModelStack) -> np.ndarray:
    tensor = _tensor(stack)
    num_classes = tensor.shape[-1]
    per_model = np.argmax(tensor, axis=-1)  # (N, H, W), ties to lowest index
    counts = (per_model[..., np.newaxis] == np.arange(num_classes)).sum(axis=0)
    return counts.astype(np.float64)


def fuse_majority(stack: ModelStack) -> LabelMask:
    """Each model votes its argmax label; the modal label wins."""
    scores = FusedScoreMap(_majority_counts(stack), Decision.MAXIMIZE)
    return argmax_decide(scores)


def fuse_scores(rule: FusionRule, stack: ModelStack) -> tuple[FusedScoreMap, LabelMask]:
    """Dispatch to a rule, returning fused scores and the decided mask.

    For MAJORITY the scores are the per-class vote counts.
    """
    if rule is FusionRule.MAJORITY:
        scores = FusedScoreMap(_majority_counts(stack), Decision.MAXIMIZE)
        return scores, argmax_decide(scores)
    dispatch = {
        FusionRule.FUZZY_RANK: fuse_fuzzy_rank,
        FusionRule.AVERAGE: fuse_average,
        FusionRule.GEOMETRIC: fuse_geometric,
        FusionRule.MEDIAN: fuse_median,
        FusionRule.MAX: fuse_max,
        FusionRule.MIN: fuse_min,
        FusionRule.BORDA: fuse_borda,
    }
    return dispatch[rule](stack)


def fuse(rule: FusionRule, stack: ModelStack) -> LabelMask:
    """Fuse a stack with the given rule and return the label mask."""
    if rule is FusionRule.MAJORITY:
        return fuse_majority(stack)
    return fuse_scores(rule, stack)[1]
