"""Dataset construction: folder-per-class image loading and a synthetic
shape benchmark that stands in for the (non-redistributable) medical sets.

The synthetic classes are parametric shapes on a noisy canvas:

  0: filled disk       1: ring (annulus)
  2: rotated cross     3: striped patch

Position, size, rotation, intensity, and per-pixel noise are jittered per
sample, so a small CNN must learn shape rather than memorize pixels, yet
every sample is individually identifiable (which lets label memorization
hurt generalization, the effect the noise experiments measure). Colors are
class-independent on purpose: shape is the only reliable cue.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .errors import DataIngestError, ValidationError
from .noise import CorruptionRecord, NoisyDataset
from .seeding import derive_seed


@dataclass(frozen=True)
class SyntheticRecipe:
    num_classes: int = 4
    image_size: int = 28
    channels: int = 3
    train_per_class: int = 500
    test_per_class: int = 250
    seed: int = 7
    pixel_noise: float = 0.10

    def __post_init__(self):
        if not 2 <= self.num_classes <= 4:
            raise ValidationError(
                f"synthetic recipe supports 2..4 shape classes, got {self.num_classes}"
            )
        if self.channels not in (1, 3):
            raise ValidationError(f"channels must be 1 or 3, got {self.channels}")
        if self.image_size < 12:
            raise ValidationError(f"image_size must be >= 12, got {self.image_size}")


def _grid(size: int):
    half = (size - 1) / 2.0
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float32)
    return (xs - half) / size, (ys - half) / size  # roughly [-0.5, 0.5]


def _shape_mask(label: int, size: int, rng) -> np.ndarray:
    xs, ys = _grid(size)
    cx = rng.uniform(-0.12, 0.12)
    cy = rng.uniform(-0.12, 0.12)
    x, y = xs - cx, ys - cy
    if label == 0:  # disk
        r = rng.uniform(0.20, 0.32)
        return x * x + y * y <= r * r
    if label == 1:  # ring
        outer = rng.uniform(0.24, 0.36)
        inner = outer - rng.uniform(0.08, 0.13)
        rr = x * x + y * y
        return (rr <= outer * outer) & (rr >= inner * inner)
    if label == 2:  # cross
        theta = rng.uniform(-np.pi / 6, np.pi / 6)
        xr = x * np.cos(theta) + y * np.sin(theta)
        yr = -x * np.sin(theta) + y * np.cos(theta)
        width = rng.uniform(0.05, 0.09)
        length = rng.uniform(0.30, 0.42)
        return ((np.abs(xr) <= width) & (np.abs(yr) <= length)) | \
               ((np.abs(yr) <= width) & (np.abs(xr) <= length))
    # stripes clipped to a disk
    theta = rng.uniform(0, np.pi)
    period = rng.uniform(0.16, 0.26)
    phase = rng.uniform(0, 2 * np.pi)
    wave = np.sin(2 * np.pi * (x * np.cos(theta) + y * np.sin(theta)) / period + phase)
    r = rng.uniform(0.30, 0.40)
    return (wave > 0.15) & (x * x + y * y <= r * r)


def _render_sample(label: int, recipe: SyntheticRecipe, rng) -> np.ndarray:
    size, channels = recipe.image_size, recipe.channels
    background = rng.uniform(0.15, 0.40)
    foreground = rng.uniform(0.60, 0.95)
    img = np.full((size, size, channels), background, dtype=np.float32)
    if channels == 3:
        img += rng.uniform(-0.05, 0.05, size=3).astype(np.float32)
    mask = _shape_mask(label, size, rng)
    color = np.full(channels, foreground, dtype=np.float32)
    if channels == 3:
        color += rng.uniform(-0.08, 0.08, size=3).astype(np.float32)
    img[mask] = color
    img += rng.normal(0.0, recipe.pixel_noise, size=img.shape).astype(np.float32)
    return np.clip(img, 0.0, 1.0)


def _generate_split(recipe: SyntheticRecipe, per_class: int, split: str) -> NoisyDataset:
    rng = np.random.default_rng(derive_seed(recipe.seed, "synthetic", split))
    images, records = [], []
    index = 0
    for label in range(recipe.num_classes):
        for _ in range(per_class):
            images.append(_render_sample(label, recipe, rng))
            records.append(CorruptionRecord(index=index, true_label=label,
                                            given_label=label, corrupted=False))
            index += 1
    manifest = {"kind": "none", "source": "synthetic", "split": split,
                "seed": recipe.seed, "num_classes": recipe.num_classes}
    return NoisyDataset(images=np.stack(images), records=records,
                        num_classes=recipe.num_classes, manifest=manifest)


def generate_synthetic(recipe: SyntheticRecipe):
    """Deterministic train/test pair; the splits use disjoint random streams."""
    train = _generate_split(recipe, recipe.train_per_class, "train")
    test = _generate_split(recipe, recipe.test_per_class, "test")
    return train, test


_IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}


def load_folder_dataset(root, image_size: int, channels: int = 3) -> NoisyDataset:
    """Load a folder-per-class tree into a clean (zero-corruption) dataset.

    Class ids follow the lexicographic order of the class directory names;
    files are read in sorted path order, so reloading gives an identical
    dataset. Grayscale files are replicated to 3 channels when channels=3.
    Unreadable files are skipped with a warning and counted in the manifest.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataIngestError(f"dataset root does not exist: {root}")
    if channels not in (1, 3):
        raise ValidationError(f"channels must be 1 or 3, got {channels}")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise DataIngestError(f"no class directories under {root}")

    images, records = [], []
    skipped = 0
    index = 0
    for label, class_dir in enumerate(class_dirs):
        files = sorted(p for p in class_dir.iterdir()
                       if p.suffix.lower() in _IMAGE_SUFFIXES)
        if not files:
            raise DataIngestError(f"class directory has no images: {class_dir}")
        loaded_any = False
        for path in files:
            raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
            if raw is None:
                warnings.warn(f"skipping unreadable image: {path}", stacklevel=2)
                skipped += 1
                continue
            img = _standardize_image(raw, image_size, channels)
            images.append(img)
            records.append(CorruptionRecord(index=index, true_label=label,
                                            given_label=label, corrupted=False))
            index += 1
            loaded_any = True
        if not loaded_any:
            raise DataIngestError(f"class directory has no readable images: {class_dir}")

    manifest = {"kind": "none", "source": "folder", "root": str(root),
                "classes": [p.name for p in class_dirs], "skipped": skipped,
                "num_classes": len(class_dirs)}
    return NoisyDataset(images=np.stack(images), records=records,
                        num_classes=len(class_dirs), manifest=manifest)


def _standardize_image(raw: np.ndarray, image_size: int, channels: int) -> np.ndarray:
    img = raw.astype(np.float32)
    if raw.dtype == np.uint8:
        img /= 255.0
    elif raw.dtype == np.uint16:
        img /= 65535.0
    img = np.clip(img, 0.0, 1.0)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.shape[2] == 4:  # drop alpha
        img = img[:, :, :3]
    if img.shape[2] == 3:
        img = img[:, :, ::-1]  # cv2 loads BGR
    if img.shape[:2] != (image_size, image_size):
        img = cv2.resize(img, (image_size, image_size), interpolation=cv2.INTER_AREA)
        if img.ndim == 2:
            img = img[:, :, None]
    if channels == 3 and img.shape[2] == 1:
        img = np.repeat(img, 3, axis=2)
    elif channels == 1 and img.shape[2] == 3:
        img = (img @ np.array([0.299, 0.587, 0.114], np.float32))[:, :, None]
    return np.ascontiguousarray(img, dtype=np.float32)
