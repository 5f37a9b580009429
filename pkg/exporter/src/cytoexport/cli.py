"""cyto-export command line: one pass over an input directory.

Raw arrays (*.npy) become canonical probability tensor files; color
ground-truth images (*.ppm/*.png/*.bmp) become class-index PGM masks
when a palette is given.  The manifest entry for the exported model is
printed to stdout as JSON.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .export import (
    ExportBatchError,
    ExportError,
    ExportJob,
    GT_IMAGE_SUFFIXES,
    convert_gt_masks,
    export_probmaps,
    load_palette,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cyto-export",
        description="Dump softmax probability maps and convert color "
                    "ground truths into the fusion tool's file formats.",
    )
    parser.add_argument("--in", dest="in_dir", required=True,
                        help="directory of raw .npy arrays and/or color GT images")
    parser.add_argument("--out", dest="out_dir", required=True)
    parser.add_argument("--classes", type=int, required=True)
    parser.add_argument("--softmax", action="store_true",
                        help="apply softmax along the class axis before writing")
    parser.add_argument("--palette", help="JSON palette for GT color conversion")
    parser.add_argument("--strict", action="store_true",
                        help="require exact palette colors when converting GT")
    parser.add_argument("--name", help="model name for the manifest entry "
                                       "(default: output directory name)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    in_dir = Path(args.in_dir)
    out_dir = Path(args.out_dir)
    summary: dict = {"command": "export", "out": str(out_dir)}
    try:
        if not in_dir.is_dir():
            raise ExportError(f"input directory {in_dir} does not exist")
        has_arrays = any(in_dir.glob("*.npy"))
        has_images = any(p.suffix.lower() in GT_IMAGE_SUFFIXES
                         for p in in_dir.iterdir())
        if not has_arrays and not has_images:
            raise ExportError(f"{in_dir} holds no .npy arrays or GT images")
        if has_arrays:
            job = ExportJob(
                source=in_dir, out_dir=out_dir, num_classes=args.classes,
                apply_softmax=args.softmax, model_name=args.name,
                palette_file=Path(args.palette) if args.palette else None,
                strict_colors=args.strict,
            )
            summary["manifest_entry"] = export_probmaps(job)
        if has_images:
            if not args.palette:
                raise ExportError("GT images present but no --palette given")
            palette = load_palette(args.palette)
            if len(palette) != args.classes:
                raise ExportError(
                    f"palette has {len(palette)} colors but --classes is {args.classes}")
            converted = convert_gt_masks(in_dir, palette, out_dir, strict=args.strict)
            summary["converted_masks"] = converted
    except ExportBatchError as exc:
        print(f"export failed:\n{exc}", file=sys.stderr)
        return 2
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(summary))
    return 0


if __name__ == "__main__":
    sys.exit(main())
