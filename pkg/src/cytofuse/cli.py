"""Command-line interface: fuse, eval, compare, and synth workflows.

Machine-readable summaries go to stdout as JSON; human progress goes to
stderr, so scripts can pipe without scraping.  Exit codes: 0 success,
1 I/O failure, 2 validation or format problem.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .core import stack_models
from .errors import CytoFuseError, ValidationError
from .io import (
    atomic_write_bytes,
    load_manifest,
    read_mask,
    read_probmap,
    write_mask,
    write_tensor,
)
from .parallel import thread_map
from .rules import FusionRule, fuse_scores
from .synth import synth_dataset
from .tables import (
    compare_models,
    evaluate_predictions,
    parse_combos,
    parse_rules,
    render_markdown,
    table_to_json,
)

EXIT_OK = 0
EXIT_IO = 1
EXIT_INVALID = 2


def _progress(message: str) -> None:
    print(message, file=sys.stderr)


def _emit(summary: dict) -> None:
    print(json.dumps(summary))


def cmd_fuse(args) -> int:
    manifest = load_manifest(args.manifest)
    rule = FusionRule.parse(args.rule)
    models = [part.strip() for part in args.models.split(",") if part.strip()]
    if not models:
        raise ValidationError("--models must name at least one model")
    for name in models:
        if name not in manifest.model_names:
            raise ValidationError(f"unknown model '{name}'")
    out_dir = Path(args.out)

    def fuse_image(image_id: str) -> None:
        stack = stack_models([
            (name, read_probmap(manifest.probmap_path(name, image_id)))
            for name in models
        ])
        scores, mask = fuse_scores(rule, stack)
        write_mask(mask, out_dir / f"{image_id}.pgm")
        if args.scores:
            write_tensor(scores.scores, out_dir / "scores" / f"{image_id}.npy")
        _progress(f"fused {image_id}")

    thread_map(fuse_image, manifest.images)
    _emit({
        "command": "fuse",
        "rule": rule.value,
        "models": models,
        "images": len(manifest.images),
        "out": str(out_dir),
    })
    return EXIT_OK


def cmd_eval(args) -> int:
    manifest = load_manifest(args.manifest)
    pred_dir = Path(args.pred)
    missing = [i for i in manifest.images if not (pred_dir / f"{i}.pgm").is_file()]
    if missing:
        raise ValidationError(f"missing predictions for: {', '.join(missing)}")
    num_classes = manifest.classes.num_classes
    report = evaluate_predictions(
        manifest,
        lambda image_id: read_mask(pred_dir / f"{image_id}.pgm", num_classes=num_classes),
    )
    if args.report == "table":
        print(report.to_text(manifest.classes.names))
    else:
        print(report.to_json())
    return EXIT_OK


def cmd_compare(args) -> int:
    manifest = load_manifest(args.manifest)
    rules = parse_rules(args.rules)
    combos = parse_combos(args.combos, manifest.model_names)
    table = compare_models(manifest, rules, combos,
                           progress=lambda i: _progress(f"evaluated {i}"))
    md_path = Path(args.out)
    json_path = md_path.with_suffix(".json")
    atomic_write_bytes(md_path, render_markdown(table).encode("utf-8"))
    atomic_write_bytes(json_path, table_to_json(table).encode("utf-8"))
    _emit({
        "command": "compare",
        "rules": [rule.value for rule in rules],
        "combos": [label for label, _ in table.combo_rows],
        "out": str(md_path),
        "json": str(json_path),
        "best_base": table.best_base(),
        "best_fused": table.best_fused(),
    })
    return EXIT_OK


def cmd_synth(args) -> int:
    try:
        height_s, width_s = args.size.lower().split("x", 1)
        height, width = int(height_s), int(width_s)
    except ValueError:
        raise ValidationError(f"--size must look like 128x128, got {args.size!r}") from None
    if args.images < 2:
        raise ValidationError("--images must be at least 2 (train/test split is 4:1)")
    dataset = synth_dataset(
        args.out, seed=args.seed, num_images=args.images,
        height=height, width=width, num_classes=args.classes,
        num_variants=args.variants,
    )
    _emit({
        "command": "synth",
        "out": str(args.out),
        "manifest": str(dataset.manifest_path),
        "images": args.images,
        "train": len(dataset.train_ids),
        "test": len(dataset.test_ids),
        "models": list(dataset.variant_names),
    })
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cyto-fuse",
        description="Fuse per-pixel class probability maps from multiple "
                    "segmentation models and evaluate the results.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_fuse = sub.add_parser("fuse", help="fuse probability maps into masks")
    p_fuse.add_argument("--manifest", required=True)
    p_fuse.add_argument("--rule", required=True,
                        help="one of: " + ", ".join(r.value for r in FusionRule))
    p_fuse.add_argument("--models", required=True, help="CSV of manifest model names")
    p_fuse.add_argument("--out", required=True, help="output directory for fused masks")
    p_fuse.add_argument("--scores", action="store_true",
                        help="also write fused score tensors under OUT/scores/")
    p_fuse.set_defaults(func=cmd_fuse)

    p_eval = sub.add_parser("eval", help="evaluate predicted masks against ground truth")
    p_eval.add_argument("--pred", required=True, help="directory of predicted .pgm masks")
    p_eval.add_argument("--manifest", required=True)
    p_eval.add_argument("--report", choices=("json", "table"), default="json")
    p_eval.set_defaults(func=cmd_eval)

    p_cmp = sub.add_parser("compare", help="rule-vs-combination comparison table")
    p_cmp.add_argument("--manifest", required=True)
    p_cmp.add_argument("--rules", default="all", help="CSV of rules or 'all'")
    p_cmp.add_argument("--combos", default="all",
                       help="CSV of name+name groups or 'all'")
    p_cmp.add_argument("--out", required=True, help="markdown output path")
    p_cmp.set_defaults(func=cmd_compare)

    p_synth = sub.add_parser("synth", help="generate a synthetic dataset")
    p_synth.add_argument("--seed", type=int, required=True)
    p_synth.add_argument("--images", type=int, required=True)
    p_synth.add_argument("--size", default="128x128", help="HxW, e.g. 128x128")
    p_synth.add_argument("--classes", type=int, default=5)
    p_synth.add_argument("--variants", type=int, default=3)
    p_synth.add_argument("--out", required=True)
    p_synth.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CytoFuseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
