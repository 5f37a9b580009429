"""Deterministic synthetic scenes plus Gaussian pixel classifiers.

Scenes are colored ellipse blobs over a dark background; later blobs
occlude earlier ones, so the ground truth is unambiguous.  Pixel-level
Gaussian classifiers over channel subsets stand in for heavyweight
segmentation models: they emit genuine softmax probability maps with
decorrelated error modes (each channel subset is blind to a different
class pair), which is exactly the input contract of the fusion engine.

All randomness flows from a counter-based generator keyed by the scene
seed and image index, so whole experiments are pure functions of their
parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import ClassSet, LabelMask, ProbMap, softmax
from .errors import ValidationError
from .io import Manifest, write_manifest, write_mask, write_probmap, write_rgb
from .parallel import thread_map
from .rules import FusionRule
from .tables import ComparisonTable, compare_models

# Up to 8 default class colors; pairwise separated by >= 160 in some
# channel, so the 3-sigma rule holds for stddev up to ~53.
DEFAULT_COLOR_MEANS = (
    (30.0, 30.0, 30.0),      # background
    (220.0, 60.0, 60.0),
    (60.0, 220.0, 60.0),
    (60.0, 60.0, 220.0),
    (220.0, 220.0, 60.0),
    (60.0, 220.0, 220.0),
    (220.0, 60.0, 220.0),
    (220.0, 220.0, 220.0),
)

DEFAULT_COLOR_STDDEV = 45.0

# (name, channel subset, variance floor).  A single variant is the
# full-feature model; ensembles take complementary two-channel models
# first (each blind to a different class pair) so their errors stay
# decorrelated and fusion has something to recover, then single channels,
# with the full-feature model as the last resort.
FULL_FEATURE_CONFIG = ("rgb", (0, 1, 2), 1.0)
VARIANT_CONFIGS = (
    ("rg", (0, 1), 1.0),
    ("gb", (1, 2), 1.0),
    ("rb", (0, 2), 1.0),
    ("r", (0,), 4.0),
    ("g", (1,), 4.0),
    ("b", (2,), 4.0),
    FULL_FEATURE_CONFIG,
)

_CHANNELS = "rgb"


@dataclass(frozen=True)
class SceneSpec:
    """Deterministic recipe for one synthetic scene family."""

    seed: int
    height: int
    width: int
    num_classes: int
    blob_count_range: tuple[int, int] = (2, 4)
    class_color_means: tuple[tuple[float, float, float], ...] | None = None
    class_color_stddev: tuple[float, float, float] = (
        DEFAULT_COLOR_STDDEV, DEFAULT_COLOR_STDDEV, DEFAULT_COLOR_STDDEV)
    background_class: int = 0

    def __post_init__(self):
        if self.seed < 0 or self.seed >= 2 ** 64:
            raise ValidationError("seed must fit in unsigned 64 bits")
        if self.height < 1 or self.width < 1:
            raise ValidationError(f"degenerate scene size {self.height}x{self.width}")
        if self.num_classes < 2 or self.num_classes > len(DEFAULT_COLOR_MEANS):
            raise ValidationError(
                f"num_classes must be in [2, {len(DEFAULT_COLOR_MEANS)}], got {self.num_classes}")
        lo, hi = self.blob_count_range
        if lo < 0 or hi < lo:
            raise ValidationError(f"bad blob count range {self.blob_count_range}")
        if self.background_class != 0:
            raise ValidationError("background class index must be 0")
        means = self.class_color_means
        if means is None:
            means = DEFAULT_COLOR_MEANS[: self.num_classes]
        means = tuple(tuple(float(v) for v in rgb) for rgb in means)
        object.__setattr__(self, "class_color_means", means)
        if len(means) != self.num_classes:
            raise ValidationError(
                f"expected {self.num_classes} color means, got {len(means)}")
        std = tuple(float(v) for v in self.class_color_stddev)
        object.__setattr__(self, "class_color_stddev", std)
        if len(std) != 3 or any(v <= 0 for v in std):
            raise ValidationError("stddev must be 3 positive per-channel values")
        for i in range(self.num_classes):
            for j in range(i + 1, self.num_classes):
                gaps = [abs(means[i][ch] - means[j][ch]) >= 3.0 * std[ch] for ch in range(3)]
                if not any(gaps):
                    raise ValidationError(
                        f"classes {i} and {j} are closer than 3 stddev in every channel")

    def mean_array(self) -> np.ndarray:
        return np.asarray(self.class_color_means, dtype=np.float64)


def _scene_rng(spec: SceneSpec, image_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=(spec.seed << 64) | image_index))


def generate_scene(spec: SceneSpec, image_index: int = 0) -> tuple[np.ndarray, LabelMask]:
    """One RGB uint8 image and its ground-truth mask."""
    rng = _scene_rng(spec, image_index)
    height, width = spec.height, spec.width
    mask = np.zeros((height, width), dtype=np.uint8)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    min_dim = min(height, width)
    lo, hi = spec.blob_count_range
    for class_idx in range(1, spec.num_classes):
        count = int(rng.integers(lo, hi + 1))
        for _ in range(count):
            cy = rng.uniform(0, height)
            cx = rng.uniform(0, width)
            ax = rng.uniform(0.10, 0.28) * min_dim
            ay = rng.uniform(0.10, 0.28) * min_dim
            theta = rng.uniform(0, math.pi)
            dx, dy = xx - cx, yy - cy
            u = dx * math.cos(theta) + dy * math.sin(theta)
            v = -dx * math.sin(theta) + dy * math.cos(theta)
            inside = (u / ax) ** 2 + (v / ay) ** 2 <= 1.0
            mask[inside] = class_idx
    noise = rng.normal(0.0, 1.0, size=(height, width, 3))
    colors = spec.mean_array()[mask] + noise * np.asarray(spec.class_color_stddev)
    image = np.clip(np.rint(colors), 0, 255).astype(np.uint8)
    return image, LabelMask(mask)


@dataclass(frozen=True)
class PixelGaussianModel:
    """Diagonal per-class Gaussian over a channel subset, plus priors."""

    means: np.ndarray       # (C, 3)
    variances: np.ndarray   # (C, 3), floored at epsilon
    priors: np.ndarray      # (C,)
    feature_mask: tuple[int, ...]
    epsilon: float
    name: str = ""

    def __post_init__(self):
        for attr in ("means", "variances", "priors"):
            arr = np.ascontiguousarray(getattr(self, attr), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, attr, arr)
        if (self.variances < self.epsilon).any():
            raise ValidationError("variances must be floored at epsilon")
        if abs(self.priors.sum() - 1.0) > 1e-9:
            raise ValidationError("priors must form a simplex")
        if not self.feature_mask or any(ch not in (0, 1, 2) for ch in self.feature_mask):
            raise ValidationError(f"bad feature mask {self.feature_mask}")

    @property
    def num_classes(self) -> int:
        return self.means.shape[0]


def fit_pixel_model(
    images: list[np.ndarray],
    masks: list[LabelMask],
    num_classes: int,
    feature_mask: tuple[int, ...] = (0, 1, 2),
    epsilon: float = 1.0,
    name: str = "",
) -> PixelGaussianModel:
    """Per-class empirical channel moments plus class-frequency priors."""
    pixels = np.concatenate([img.reshape(-1, 3).astype(np.float64) for img in images])
    labels = np.concatenate([m.labels.ravel() for m in masks])
    means = np.zeros((num_classes, 3))
    variances = np.zeros((num_classes, 3))
    priors = np.zeros(num_classes)
    for k in range(num_classes):
        chosen = pixels[labels == k]
        if chosen.shape[0] == 0:
            raise ValidationError(f"class {k} has no pixels in the training split")
        means[k] = chosen.mean(axis=0)
        variances[k] = chosen.var(axis=0)
        priors[k] = chosen.shape[0]
    priors /= priors.sum()
    variances = np.maximum(variances, epsilon)
    return PixelGaussianModel(
        means=means, variances=variances, priors=priors,
        feature_mask=tuple(feature_mask), epsilon=float(epsilon), name=name)


def predict_probmap(model: PixelGaussianModel, image: np.ndarray) -> ProbMap:
    """Softmax over per-class log prior + Gaussian log density."""
    channels = list(model.feature_mask)
    x = image[..., channels].astype(np.float64)
    mu = model.means[:, channels]
    var = model.variances[:, channels]
    log_scores = np.empty(image.shape[:2] + (model.num_classes,), dtype=np.float64)
    for k in range(model.num_classes):
        quad = np.square(x - mu[k]) / var[k]
        log_scores[..., k] = (
            math.log(model.priors[k])
            - 0.5 * (quad.sum(axis=-1) + np.log(2.0 * math.pi * var[k]).sum())
        )
    return ProbMap.from_array(softmax(log_scores, axis=-1))


def make_model_variants(
    images: list[np.ndarray],
    masks: list[LabelMask],
    num_classes: int,
    k: int,
) -> list[PixelGaussianModel]:
    """k deterministic variants with distinct channel subsets."""
    if k < 1:
        raise ValidationError("need at least one variant")
    if k > len(VARIANT_CONFIGS):
        raise ValidationError(
            f"only {len(VARIANT_CONFIGS)} distinct variant configurations exist, requested {k}")
    configs = (FULL_FEATURE_CONFIG,) if k == 1 else VARIANT_CONFIGS[:k]
    return [
        fit_pixel_model(images, masks, num_classes,
                        feature_mask=mask_cfg, epsilon=eps, name=name)
        for name, mask_cfg, eps in configs
    ]


def train_test_split(image_ids: list[str]) -> tuple[list[str], list[str]]:
    """4:1 split; at least one image on each side."""
    total = len(image_ids)
    if total < 2:
        raise ValidationError("need at least 2 images for a train/test split")
    train_count = max(1, min(total - 1, (total * 4) // 5))
    return image_ids[:train_count], image_ids[train_count:]


@dataclass(frozen=True)
class SynthDataset:
    manifest_path: Path
    manifest: Manifest
    train_ids: tuple[str, ...]
    test_ids: tuple[str, ...]
    variant_names: tuple[str, ...]


def synth_dataset(
    out_dir: str | Path,
    seed: int,
    num_images: int,
    height: int,
    width: int,
    num_classes: int,
    num_variants: int,
    blob_count_range: tuple[int, int] = (2, 4),
) -> SynthDataset:
    """Write a complete dataset the fuse/eval/compare commands can consume."""
    out_dir = Path(out_dir)
    spec = SceneSpec(seed=seed, height=height, width=width,
                     num_classes=num_classes, blob_count_range=blob_count_range)
    image_ids = [f"img_{i:03d}" for i in range(num_images)]
    train_ids, test_ids = train_test_split(image_ids)

    scenes = thread_map(lambda i: generate_scene(spec, i), range(num_images))
    for image_id, (image, mask) in zip(image_ids, scenes):
        write_rgb(image, out_dir / "images" / f"{image_id}.ppm")
        write_mask(mask, out_dir / "gt" / f"{image_id}.pgm")

    by_id = dict(zip(image_ids, scenes))
    train_images = [by_id[i][0] for i in train_ids]
    train_masks = [by_id[i][1] for i in train_ids]
    variants = make_model_variants(train_images, train_masks, num_classes, num_variants)

    def dump_variant(model: PixelGaussianModel):
        for image_id in test_ids:
            probmap = predict_probmap(model, by_id[image_id][0])
            write_probmap(probmap, out_dir / "models" / model.name / f"{image_id}.npy")

    thread_map(dump_variant, variants)

    palette = tuple(tuple(int(round(v)) for v in rgb)
                    for rgb in spec.class_color_means)
    names = ("background",) + tuple(f"class_{k}" for k in range(1, num_classes))
    manifest = Manifest(
        classes=ClassSet(num_classes, names, palette=palette),
        models=tuple((m.name, f"models/{m.name}") for m in variants),
        ground_truth_dir="gt",
        images=tuple(test_ids),
        base_dir=out_dir,
        splits=(tuple(train_ids), tuple(test_ids)),
    )
    manifest_path = out_dir / "manifest.json"
    write_manifest(manifest, manifest_path)
    return SynthDataset(
        manifest_path=manifest_path,
        manifest=manifest,
        train_ids=tuple(train_ids),
        test_ids=tuple(test_ids),
        variant_names=tuple(m.name for m in variants),
    )


def run_experiment(
    out_dir: str | Path,
    seed: int,
    num_images: int,
    height: int,
    width: int,
    num_classes: int,
    num_variants: int,
    rules: tuple[FusionRule, ...],
    combo_arg: str = "all",
) -> ComparisonTable:
    """Generate, fuse, and evaluate in one deterministic pass."""
    from .tables import parse_combos

    dataset = synth_dataset(out_dir, seed, num_images, height, width,
                            num_classes, num_variants)
    combos = parse_combos(combo_arg, dataset.manifest.model_names)
    return compare_models(dataset.manifest, rules, combos)
