"""Rule-vs-combination comparison tables: building, markdown, JSON.

A comparison table holds mean IoU (as fractions) for each base model and
for every (model combination, fusion rule) cell.  The markdown renderer
prints percents at 2 decimals and bolds each combination row's maximum,
mirroring the layout of published fusion-rule comparisons.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from typing import Callable, Sequence

from .core import Decision, FusedScoreMap, argmax_decide, stack_models
from .errors import ValidationError
from .io import Manifest, read_mask, read_probmap
from .metrics import ConfusionMatrix, EvalReport, accumulate, mean_iou, percent
from .parallel import thread_map
from .rules import COMPARISON_RULES, FusionRule, fuse

RULE_TITLES = {
    FusionRule.AVERAGE: "Average Probability",
    FusionRule.GEOMETRIC: "Geometric Mean",
    FusionRule.MEDIAN: "Median",
    FusionRule.MAX: "Max Rule",
    FusionRule.MIN: "Min Rule",
    FusionRule.BORDA: "Borda Count",
    FusionRule.FUZZY_RANK: "Fuzzy Rank Voting",
    FusionRule.MAJORITY: "Majority Voting",
}


@dataclass(frozen=True)
class ComparisonTable:
    """Mean IoU fractions for base models and (combo, rule) cells."""

    rules: tuple[FusionRule, ...]
    base_rows: tuple[tuple[str, float], ...]
    combo_rows: tuple[tuple[str, tuple[float, ...]], ...]

    def best_base(self) -> float:
        return max(iou for _, iou in self.base_rows)

    def best_fused(self) -> float:
        return max(max(cells) for _, cells in self.combo_rows)


def parse_rules(arg: str) -> tuple[FusionRule, ...]:
    """CSV of rule names, or "all" for the seven comparison columns."""
    if arg.strip().lower() == "all":
        return COMPARISON_RULES
    rules = tuple(FusionRule.parse(part) for part in arg.split(","))
    if len(set(rules)) != len(rules):
        raise ValidationError(f"duplicate rules in {arg!r}")
    return rules


def parse_combos(arg: str, model_names: Sequence[str]) -> tuple[tuple[str, ...], ...]:
    """CSV of name+name groups, or "all" for every subset of size >= 2.

    "all" lists the full ensemble first, then smaller subsets by size and
    manifest order, matching the published table row order.
    """
    names = list(model_names)
    if arg.strip().lower() == "all":
        if len(names) < 2:
            raise ValidationError("combinations need at least 2 models in the manifest")
        combos = []
        for size in range(len(names), 1, -1):
            combos.extend(itertools.combinations(names, size))
        return tuple(combos)
    combos = []
    for group in arg.split(","):
        members = tuple(part.strip() for part in group.split("+"))
        if not members or any(not m for m in members):
            raise ValidationError(f"empty combination in {arg!r}")
        for member in members:
            if member not in names:
                raise ValidationError(f"unknown model '{member}'")
        # repeats are allowed: fusing a model with itself is the identity
        combos.append(members)
    return tuple(combos)


def combo_label(members: Sequence[str]) -> str:
    return "+".join(members)


def compare_models(
    manifest: Manifest,
    rules: Sequence[FusionRule],
    combos: Sequence[Sequence[str]],
    progress: Callable[[str], None] | None = None,
) -> ComparisonTable:
    """Fuse every (combo, rule) over the manifest images and evaluate."""
    rules = tuple(rules)
    combos = tuple(tuple(c) for c in combos)
    num_classes = manifest.classes.num_classes
    model_names = manifest.model_names

    def evaluate_image(image_id: str):
        gt = read_mask(manifest.gt_path(image_id), num_classes=num_classes)
        maps = {name: read_probmap(manifest.probmap_path(name, image_id))
                for name in model_names}
        partial: dict = {}
        for name in model_names:
            pred = argmax_decide(FusedScoreMap(
                maps[name].data.astype(float), Decision.MAXIMIZE))
            partial[("base", name)] = accumulate(
                ConfusionMatrix.zeros(num_classes), pred, gt, image_id=image_id)
        for members in combos:
            stack = stack_models([(name, maps[name]) for name in members])
            for rule in rules:
                pred = fuse(rule, stack)
                partial[(combo_label(members), rule)] = accumulate(
                    ConfusionMatrix.zeros(num_classes), pred, gt, image_id=image_id)
        if progress is not None:
            progress(image_id)
        return partial

    merged: dict = {}
    for partial in thread_map(evaluate_image, manifest.images):
        for key, cm in partial.items():
            merged[key] = merged[key].merge(cm) if key in merged else cm

    base_rows = tuple(
        (name, mean_iou(merged[("base", name)])) for name in model_names
    )
    combo_rows = tuple(
        (combo_label(members),
         tuple(mean_iou(merged[(combo_label(members), rule)]) for rule in rules))
        for members in combos
    )
    return ComparisonTable(rules=rules, base_rows=base_rows, combo_rows=combo_rows)


def evaluate_predictions(
    manifest: Manifest,
    mask_for_image: Callable[[str], "object"],
) -> EvalReport:
    """Pool one confusion matrix over all manifest images and report."""
    num_classes = manifest.classes.num_classes

    def one(image_id: str) -> ConfusionMatrix:
        gt = read_mask(manifest.gt_path(image_id), num_classes=num_classes)
        pred = mask_for_image(image_id)
        return accumulate(ConfusionMatrix.zeros(num_classes), pred, gt, image_id=image_id)

    cm = ConfusionMatrix.zeros(num_classes)
    for partial in thread_map(one, manifest.images):
        cm = cm.merge(partial)
    return EvalReport.from_confusion(cm)


def render_markdown(table: ComparisonTable, title: str = "Fusion rule comparison") -> str:
    """Markdown document; combination cells are percents, row max bolded."""
    lines = [f"# {title}", "",
             "Mean IoU (%), pooled over all evaluated pixels. "
             "Best value of each combination row in bold.", ""]
    if table.base_rows:
        lines += ["## Base models", "", "| Model | Mean IoU |", "| --- | --- |"]
        lines += [f"| {name} | {percent(iou)} |" for name, iou in table.base_rows]
        lines.append("")
    headers = ["MODEL"] + [RULE_TITLES[rule] for rule in table.rules]
    lines += ["## Fusion rules", "",
              "| " + " | ".join(headers) + " |",
              "| " + " | ".join(["---"] * len(headers)) + " |"]
    for label, cells in table.combo_rows:
        rendered = [percent(v) for v in cells]
        best = max(rendered, key=float) if rendered else ""
        rendered = [f"**{v}**" if v == best else v for v in rendered]
        lines.append("| " + " | ".join([label] + rendered) + " |")
    lines.append("")
    return "\n".join(lines)


def table_to_doc(table: ComparisonTable) -> dict:
    """JSON-ready document with full-precision fractions."""
    return {
        "rules": [rule.value for rule in table.rules],
        "base_models": [{"model": name, "mean_iou": iou} for name, iou in table.base_rows],
        "combinations": [
            {"models": label.split("+"), "label": label,
             "mean_iou": {rule.value: value for rule, value in zip(table.rules, cells)}}
            for label, cells in table.combo_rows
        ],
    }


def table_from_doc(doc: dict) -> ComparisonTable:
    """Inverse of table_to_doc, also used to load fixture tables."""
    rules = tuple(FusionRule.parse(name) for name in doc["rules"])
    base_rows = tuple((row["model"], float(row["mean_iou"]))
                      for row in doc.get("base_models", []))
    combo_rows = []
    for row in doc["combinations"]:
        cells = tuple(float(row["mean_iou"][rule.value]) for rule in rules)
        combo_rows.append((row["label"], cells))
    return ComparisonTable(rules=rules, base_rows=base_rows, combo_rows=tuple(combo_rows))


def table_to_json(table: ComparisonTable) -> str:
    return json.dumps(table_to_doc(table), indent=2) + "\n"
