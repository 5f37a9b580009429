"""Export probability tensors and convert color ground truths.

Tensor files are written with numpy's native serializer, which emits the
exact canonical layout the fusion tool's readers require (version 1.0,
little-endian float32, C order, rank 3).  Masks are binary PGM (P5,
maxval 255) holding raw class indices.  This package deliberately does
not import the fusion tool; the file formats are the whole contract.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np
from PIL import Image

GT_IMAGE_SUFFIXES = (".ppm", ".png", ".bmp")


class ExportError(Exception):
    """A single input could not be exported."""


class ExportBatchError(Exception):
    """One or more inputs failed; carries the per-file report."""

    def __init__(self, failures: list[tuple[str, str]]):
        self.failures = failures
        lines = "\n".join(f"  {name}: {message}" for name, message in failures)
        super().__init__(f"{len(failures)} input(s) failed:\n{lines}")



@dataclass
class ExportJob:
    """One probability-map export run."""

    source: object                      # directory, iterable, or callable
    out_dir: Path
    num_classes: int
    apply_softmax: bool = False
    model_name: str | None = None
    palette_file: Path | None = None
    strict_colors: bool = False

    def __post_init__(self):
        self.out_dir = Path(self.out_dir)
        if self.num_classes < 2:
            raise ExportError(f"need at least 2 classes, got {self.num_classes}")


def softmax_last_axis(values: np.ndarray) -> np.ndarray:
    """Max-subtracted softmax along the class axis, in float64."""
    x = np.asarray(values, dtype=np.float64)
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _iter_arrays(source) -> Iterator[tuple[str, np.ndarray]]:
    if callable(source):
        source = source()
    if isinstance(source, (str, Path)):
        directory = Path(source)
        if not directory.is_dir():
            raise ExportError(f"input directory {directory} does not exist")
        for path in sorted(directory.glob("*.npy")):
            yield path.stem, np.load(path, allow_pickle=False)
    else:
        for image_id, array in source:
            yield str(image_id), np.asarray(array)


def _check_array(image_id: str, array: np.ndarray, num_classes: int) -> np.ndarray:
    if array.ndim != 3:
        raise ExportError(f"array must be rank 3 H x W x C, got rank {array.ndim}")
    if array.shape[2] != num_classes:
        raise ExportError(
            f"array has {array.shape[2]} channels, expected {num_classes} classes")
    if not np.isfinite(array).all():
        bad = np.argwhere(~np.isfinite(array))[0]
        raise ExportError(f"non-finite value at {tuple(int(v) for v in bad)}")
    return array


def export_probmaps(job: ExportJob) -> dict:
    """Write one canonical tensor file per input; return the manifest entry.

    Every input is attempted; failures are collected into one batch error
    so the report covers the whole run.
    """
    job.out_dir.mkdir(parents=True, exist_ok=True)
    failures: list[tuple[str, str]] = []
    written = []
    for image_id, array in _iter_arrays(job.source):
        try:
            array = _check_array(image_id, array, job.num_classes)
            values = array.astype(np.float64)
            if job.apply_softmax:
                values = softmax_last_axis(values)
            payload = np.ascontiguousarray(values, dtype="<f4")
            np.save(job.out_dir / f"{image_id}.npy", payload)
            written.append(image_id)
        except ExportError as exc:
            failures.append((image_id, str(exc)))
    if failures:
        raise ExportBatchError(failures)
    return {"name": job.model_name or job.out_dir.name,
            "dir": str(job.out_dir),
            "images": written}


def load_palette(path: str | Path) -> list[tuple[int, int, int]]:
    """JSON palette: a bare list of [r, g, b] rows or {"colors": [...]}."""
    doc = json.loads(Path(path).read_text("utf-8"))
    colors = doc.get("colors") if isinstance(doc, dict) else doc
    if not isinstance(colors, list) or not colors:
        raise ExportError(f"{path}: expected a list of [r, g, b] rows")
    palette = []
    for row in colors:
        if not (isinstance(row, list) and len(row) == 3
                and all(isinstance(v, int) and 0 <= v <= 255 for v in row)):
            raise ExportError(f"{path}: bad palette row {row!r}")
        palette.append(tuple(row))
    return palette


def _iter_images(source) -> Iterator[tuple[str, np.ndarray]]:
    if isinstance(source, (str, Path)):
        directory = Path(source)
        for path in sorted(directory.iterdir()):
            if path.suffix.lower() in GT_IMAGE_SUFFIXES:
                with Image.open(path) as img:
                    yield path.stem, np.asarray(img.convert("RGB"))
    else:
        for image_id, array in source:
            yield str(image_id), np.asarray(array)


def colors_to_indices(
    rgb: np.ndarray,
    palette: list[tuple[int, int, int]],
    strict: bool,
) -> np.ndarray:
    """Map H x W x 3 colors to palette indices.

    Strict mode demands exact palette colors and reports every unknown
    color with its pixel count; nearest mode picks the closest palette
    entry by squared RGB distance, ties to the lower class index.
    """
    flat = rgb.reshape(-1, 3).astype(np.int64)
    table = np.asarray(palette, dtype=np.int64)
    distances = ((flat[:, None, :] - table[None, :, :]) ** 2).sum(axis=2)
    nearest = np.argmin(distances, axis=1)
    if strict:
        exact = distances[np.arange(flat.shape[0]), nearest] == 0
        if not exact.all():
            unknown, counts = np.unique(flat[~exact], axis=0, return_counts=True)
            # report sorted by frequency so the worst offender leads
            order = np.argsort(-counts)
            listing = ", ".join(
                f"({r}, {g}, {b}) x {n}"
                for (r, g, b), n in zip(unknown[order], counts[order])
            )
            raise ExportError(f"colors not in palette: {listing}")
    return nearest.reshape(rgb.shape[:2]).astype(np.uint8)


def write_pgm(labels: np.ndarray, path: str | Path) -> None:
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    header = f"P5\n{labels.shape[1]} {labels.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + labels.tobytes())


def convert_gt_masks(
    source,
    palette: list[tuple[int, int, int]],
    out_dir: str | Path,
    strict: bool = False,
) -> list[str]:
    """Convert color ground-truth images to class-index PGM masks."""
    if len(palette) > 256:
        raise ExportError("palette cannot exceed 256 classes (mask format limit)")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    failures: list[tuple[str, str]] = []
    written = []
    for image_id, rgb in _iter_images(source):
        try:
            if rgb.ndim != 3 or rgb.shape[2] != 3:
                raise ExportError(f"expected an RGB image, got shape {rgb.shape}")
            labels = colors_to_indices(rgb, palette, strict)
            write_pgm(labels, out_dir / f"{image_id}.pgm")
            written.append(image_id)
        except ExportError as exc:
            failures.append((image_id, str(exc)))
    if failures:
        raise ExportBatchError(failures)
    return written
