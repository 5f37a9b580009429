"""Bit-exact file formats: probability tensors, index masks, manifests.

Tensor files are a strict subset of the standard binary array format
(version 1.0, little-endian float32, C order, rank 3).  Writers emit one
canonical byte layout and readers accept only that layout, so round
trips are byte-identical and files diff cleanly.

Masks are binary PGM (P5, maxval 255) holding raw class indices; color
renderings are binary PPM (P6).  Manifests are UTF-8 JSON, version
"cyto-fuse/1", with unknown keys rejected.
"""

from __future__ import annotations

import ast
import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import ClassSet, LabelMask, ProbMap
from .errors import FormatError, ParseError, ValidationError

MANIFEST_VERSION = "cyto-fuse/1"

_MAGIC = b"\x93NUMPY"
_VERSION = b"\x01\x00"


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """Write via a temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# Probability tensors
# ---------------------------------------------------------------------------

def canonical_tensor_header(shape: tuple[int, int, int]) -> bytes:
    """The one header byte layout writers emit and readers require.

    magic + version + uint16 header length + dict text padded with
    spaces to a 64-byte total multiple, newline terminated.
    """
    h, w, c = (int(v) for v in shape)
    text = "{'descr': '<f4', 'fortran_order': False, 'shape': (%d, %d, %d), }" % (h, w, c)
    unpadded = len(_MAGIC) + len(_VERSION) + 2 + len(text) + 1
    padded_total = ((unpadded + 63) // 64) * 64
    header = text + " " * (padded_total - unpadded) + "\n"
    return _MAGIC + _VERSION + len(header).to_bytes(2, "little") + header.encode("latin1")


def write_tensor(array: np.ndarray, path: str | Path) -> None:
    """Emit any H x W x C float array in the canonical tensor layout."""
    array = np.asarray(array)
    if array.ndim != 3:
        raise ValidationError(f"tensor must be rank 3, got {array.ndim}")
    if not np.isfinite(array).all():
        raise ValidationError(f"refusing to write non-finite tensor to {path}")
    payload = np.ascontiguousarray(array, dtype="<f4").tobytes()
    atomic_write_bytes(path, canonical_tensor_header(array.shape) + payload)


def write_probmap(probmap: ProbMap, path: str | Path) -> None:
    """Emit the canonical header plus row-major float32 payload."""
    if not np.isfinite(probmap.data).all():
        raise ValidationError(f"refusing to write non-finite probability map to {path}")
    write_tensor(probmap.data, path)


def read_probmap(path: str | Path) -> ProbMap:
    """Parse and validate one canonical tensor file."""
    data = Path(path).read_bytes()
    if len(data) < 10:
        raise ParseError(f"{path}: truncated header, {len(data)} bytes (need at least 10)")
    if data[:6] != _MAGIC:
        raise ParseError(f"{path}: bad magic {data[:6]!r} at byte offset 0")
    if data[6:8] != _VERSION:
        raise FormatError(f"{path}: unsupported format version {data[6]}.{data[7]}")
    header_len = int.from_bytes(data[8:10], "little")
    header_end = 10 + header_len
    if len(data) < header_end:
        raise ParseError(
            f"{path}: truncated header at byte offset 10: "
            f"declared {header_len} bytes, file holds {len(data) - 10}"
        )
    header = data[10:header_end]
    try:
        fields = ast.literal_eval(header.decode("latin1").strip())
    except (ValueError, SyntaxError) as exc:
        raise ParseError(f"{path}: unparseable header at byte offset 10: {exc}") from None
    if not isinstance(fields, dict) or set(fields) != {"descr", "fortran_order", "shape"}:
        raise ParseError(f"{path}: malformed header dict at byte offset 10")
    if fields["descr"] != "<f4":
        raise FormatError(f"{path}: payload must be little-endian float32, got {fields['descr']!r}")
    if fields["fortran_order"] is not False:
        raise FormatError(f"{path}: fortran order is not supported")
    shape = fields["shape"]
    if not (isinstance(shape, tuple) and len(shape) == 3
            and all(isinstance(v, int) and v > 0 for v in shape)):
        raise FormatError(f"{path}: tensor must be rank 3 H x W x C, got shape {shape!r}")
    if data[:header_end] != canonical_tensor_header(shape):
        raise FormatError(f"{path}: header is not in canonical form")
    expected = shape[0] * shape[1] * shape[2] * 4
    actual = len(data) - header_end
    if actual != expected:
        raise ParseError(
            f"{path}: payload size mismatch at byte offset {header_end}: "
            f"expected {expected} bytes, got {actual}"
        )
    arr = np.frombuffer(data[header_end:], dtype="<f4").reshape(shape)
    try:
        return ProbMap.from_array(arr)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from None


# ---------------------------------------------------------------------------
# Netpbm masks and renderings
# ---------------------------------------------------------------------------

def _parse_netpbm(data: bytes, path, magic: bytes, ascii_magic: bytes, channels: int) -> np.ndarray:
    kind = "PGM" if magic == b"P5" else "PPM"
    if data[:2] == ascii_magic:
        raise FormatError(f"{path}: ASCII {kind} ({ascii_magic.decode()}) is not supported")
    if data[:2] != magic:
        raise ParseError(f"{path}: bad magic {data[:2]!r} at byte offset 0")
    # Tokenize width/height/maxval; '#' starts a comment through end of line.
    pos = 2
    values = []
    while len(values) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and data[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise ParseError(f"{path}: expected integer in header at byte offset {pos}")
        values.append(int(data[start:pos]))
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise ParseError(f"{path}: missing whitespace after maxval at byte offset {pos}")
    pos += 1
    width, height, maxval = values
    if maxval != 255:
        raise FormatError(f"{path}: maxval must be 255, got {maxval}")
    expected = width * height * channels
    payload = data[pos:]
    if len(payload) != expected:
        raise ParseError(
            f"{path}: payload size mismatch at byte offset {pos}: "
            f"expected {expected} bytes, got {len(payload)}"
        )
    arr = np.frombuffer(payload, dtype=np.uint8)
    if channels == 1:
        return arr.reshape(height, width).copy()
    return arr.reshape(height, width, channels).copy()


def write_mask(mask: LabelMask, path: str | Path) -> None:
    """Binary PGM with raw class indices as bytes."""
    header = f"P5\n{mask.width} {mask.height}\n255\n".encode("ascii")
    atomic_write_bytes(path, header + mask.labels.tobytes())


def read_mask(path: str | Path, num_classes: int | None = None) -> LabelMask:
    data = Path(path).read_bytes()
    labels = _parse_netpbm(data, path, b"P5", b"P2", channels=1)
    mask = LabelMask(labels)
    if num_classes is not None:
        try:
            mask.check_labels(num_classes)
        except ValidationError as exc:
            raise ValidationError(f"{path}: {exc}") from None
    return mask


def write_rgb(image: np.ndarray, path: str | Path) -> None:
    """Binary PPM from an H x W x 3 uint8 array."""
    image = np.ascontiguousarray(image, dtype=np.uint8)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValidationError(f"expected H x W x 3 RGB array, got shape {image.shape}")
    header = f"P6\n{image.shape[1]} {image.shape[0]}\n255\n".encode("ascii")
    atomic_write_bytes(path, header + image.tobytes())


def read_rgb(path: str | Path) -> np.ndarray:
    return _parse_netpbm(Path(path).read_bytes(), path, b"P6", b"P3", channels=3)


def render_mask(mask: LabelMask, classes: ClassSet) -> np.ndarray:
    """Paint class indices with the palette; returns H x W x 3 uint8."""
    if classes.palette is None:
        raise ValidationError("cannot render mask: class set has no palette")
    mask.check_labels(classes.num_classes)
    lut = np.asarray(classes.palette, dtype=np.uint8)
    return lut[mask.labels]


# ---------------------------------------------------------------------------
# Palettes
# ---------------------------------------------------------------------------

def load_palette(path: str | Path) -> tuple[tuple[int, int, int], ...]:
    """Palette data file: a JSON list of [r, g, b] rows, or an object
    with a "colors" list (extra "names" allowed for documentation)."""
    try:
        doc = json.loads(Path(path).read_text("utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc}") from None
    colors = doc.get("colors") if isinstance(doc, dict) else doc
    if not isinstance(colors, list) or not colors:
        raise FormatError(f"{path}: expected a list of [r, g, b] rows")
    palette = []
    for row in colors:
        if not (isinstance(row, list) and len(row) == 3
                and all(isinstance(v, int) and 0 <= v <= 255 for v in row)):
            raise FormatError(f"{path}: bad palette row {row!r}")
        palette.append(tuple(row))
    return tuple(palette)


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Manifest:
    """Binds model names to directories of tensors plus ground truths."""

    classes: ClassSet
    models: tuple[tuple[str, str], ...]
    ground_truth_dir: str
    images: tuple[str, ...]
    base_dir: Path
    splits: tuple[tuple[str, ...], tuple[str, ...]] | None = None  # (train, test)
    version: str = MANIFEST_VERSION

    @property
    def model_names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.models)

    def _resolve(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.base_dir / p

    def model_dir(self, name: str) -> Path:
        for model_name, rel in self.models:
            if model_name == name:
                return self._resolve(rel)
        raise ValidationError(f"unknown model '{name}'")

    def probmap_path(self, name: str, image_id: str) -> Path:
        return self.model_dir(name) / f"{image_id}.npy"

    def gt_path(self, image_id: str) -> Path:
        return self._resolve(self.ground_truth_dir) / f"{image_id}.pgm"


def _require_keys(doc: dict, allowed: set[str], required: set[str], where: str, path) -> None:
    unknown = set(doc) - allowed
    if unknown:
        raise FormatError(f"{path}: unknown {where} keys: {sorted(unknown)}")
    missing = required - set(doc)
    if missing:
        raise FormatError(f"{path}: missing {where} keys: {sorted(missing)}")


def load_manifest(path: str | Path, check_files: bool = True) -> Manifest:
    """Parse a manifest and cross-check every referenced file exists."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text("utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise FormatError(f"{path}: manifest must be a JSON object")
    _require_keys(
        doc,
        allowed={"version", "classes", "models", "ground_truth_dir", "images", "splits"},
        required={"version", "classes", "models", "ground_truth_dir", "images"},
        where="manifest", path=path,
    )
    if doc["version"] != MANIFEST_VERSION:
        raise FormatError(
            f"{path}: unsupported manifest version {doc['version']!r} "
            f"(expected {MANIFEST_VERSION!r})"
        )

    cdoc = doc["classes"]
    if not isinstance(cdoc, dict):
        raise FormatError(f"{path}: 'classes' must be an object")
    _require_keys(cdoc, allowed={"num_classes", "names", "palette"},
                  required={"num_classes", "names"}, where="classes", path=path)
    palette = cdoc.get("palette")
    classes = ClassSet(
        num_classes=int(cdoc["num_classes"]),
        names=tuple(cdoc["names"]),
        palette=tuple(tuple(rgb) for rgb in palette) if palette is not None else None,
    )

    models = []
    for mdoc in doc["models"]:
        if not isinstance(mdoc, dict):
            raise FormatError(f"{path}: each model entry must be an object")
        _require_keys(mdoc, allowed={"name", "dir"}, required={"name", "dir"},
                      where="model", path=path)
        models.append((str(mdoc["name"]), str(mdoc["dir"])))
    if not models:
        raise ValidationError(f"{path}: manifest lists no models")
    names = [name for name, _ in models]
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise ValidationError(f"{path}: duplicate model names: {dupes}")

    images = tuple(str(i) for i in doc["images"])
    if not images:
        raise ValidationError(f"{path}: manifest lists no images")
    if len(set(images)) != len(images):
        dupes = sorted({i for i in images if images.count(i) > 1})
        raise ValidationError(f"{path}: duplicate image ids: {dupes}")

    splits = None
    if "splits" in doc:
        sdoc = doc["splits"]
        if not isinstance(sdoc, dict):
            raise FormatError(f"{path}: 'splits' must be an object")
        _require_keys(sdoc, allowed={"train", "test"}, required={"train", "test"},
                      where="splits", path=path)
        splits = (tuple(str(i) for i in sdoc["train"]), tuple(str(i) for i in sdoc["test"]))
        if splits[1] != images:
            raise ValidationError(f"{path}: splits.test must equal the images list")

    manifest = Manifest(
        classes=classes,
        models=tuple(models),
        ground_truth_dir=str(doc["ground_truth_dir"]),
        images=images,
        base_dir=path.resolve().parent,
        splits=splits,
    )

    if check_files:
        missing = []
        for image_id in manifest.images:
            gt = manifest.gt_path(image_id)
            if not gt.is_file():
                missing.append(str(gt))
            for name in manifest.model_names:
                pm = manifest.probmap_path(name, image_id)
                if not pm.is_file():
                    missing.append(str(pm))
        if missing:
            listing = "\n  ".join(missing)
            raise ValidationError(f"{path}: missing referenced files:\n  {listing}")
    return manifest


def write_manifest(manifest: Manifest, path: str | Path) -> None:
    doc: dict = {
        "version": manifest.version,
        "classes": {
            "num_classes": manifest.classes.num_classes,
            "names": list(manifest.classes.names),
        },
        "models": [{"name": name, "dir": rel} for name, rel in manifest.models],
        "ground_truth_dir": manifest.ground_truth_dir,
        "images": list(manifest.images),
    }
    if manifest.classes.palette is not None:
        doc["classes"]["palette"] = [list(rgb) for rgb in manifest.classes.palette]
    if manifest.splits is not None:
        doc["splits"] = {"train": list(manifest.splits[0]), "test": list(manifest.splits[1])}
    atomic_write_bytes(path, (json.dumps(doc, indent=2) + "\n").encode("utf-8"))
