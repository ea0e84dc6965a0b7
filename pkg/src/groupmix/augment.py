"""Weak/strong image augmentation producing the three-view training input.

Images are (H, W, C) float32 arrays in [0, 1] with 1 or 3 channels. Weak
views apply small affine perturbations (rotation, flips); strong views add
pixel-value perturbations (Gaussian blur, color or grayscale jitter). There
is deliberately no cropping or erasing, so spatial dimensions never change.

Every transform fires independently with ``apply_prob`` (default 50%).
Draw order is fixed per view: rotate?, angle, vflip?, hflip?, then for
strong views blur?, sigma, jitter?, factors. Passing the same rng state
reproduces a view bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

from .errors import ValidationError

_LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float32)


@dataclass(frozen=True)
class AugmentConfig:
    apply_prob: float = 0.5
    rotation_degrees: float = 15.0
    blur_sigma: tuple[float, float] = (0.1, 1.0)
    jitter_range: tuple[float, float] = (0.8, 1.2)

    def __post_init__(self):
        object.__setattr__(self, "blur_sigma", tuple(self.blur_sigma))
        object.__setattr__(self, "jitter_range", tuple(self.jitter_range))
        if not 0.0 <= self.apply_prob <= 1.0:
            raise ValidationError(f"apply_prob must be in [0, 1], got {self.apply_prob}")


DEFAULT_AUGMENT = AugmentConfig()


@dataclass(frozen=True)
class ViewTriplet:
    """(weak, strong, strong) views of one source image."""

    weak: np.ndarray
    strong_a: np.ndarray
    strong_b: np.ndarray
    source_index: int


def _check_image(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] not in (1, 3):
        raise ValidationError(
            f"expected an (H, W, C) image with 1 or 3 channels, got shape {image.shape}"
        )
    return image.astype(np.float32, copy=False)


def _rotate(image: np.ndarray, angle_degrees: float) -> np.ndarray:
    h, w = image.shape[:2]
    m = cv2.getRotationMatrix2D(((w - 1) / 2.0, (h - 1) / 2.0), angle_degrees, 1.0)
    out = cv2.warpAffine(image, m, (w, h), flags=cv2.INTER_LINEAR,
                         borderMode=cv2.BORDER_REFLECT_101)
    return out[:, :, None] if out.ndim == 2 else out


def _gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    ksize = int(round(4.0 * sigma))
    if ksize % 2 == 0:
        ksize += 1
    ksize = max(ksize, 1)
    out = cv2.GaussianBlur(image, (ksize, ksize), sigmaX=sigma,
                           borderType=cv2.BORDER_REFLECT_101)
    return out[:, :, None] if out.ndim == 2 else out


def _color_jitter(image: np.ndarray, brightness: float, contrast: float,
                  saturation: float) -> np.ndarray:
    out = image * brightness
    mean = float((out @ _LUMA).mean())
    out = mean + (out - mean) * contrast
    gray = (out @ _LUMA)[:, :, None]
    return gray + (out - gray) * saturation


def _gray_jitter(image: np.ndarray, brightness: float, contrast: float) -> np.ndarray:
    out = image * brightness
    mean = float(out.mean())
    return mean + (out - mean) * contrast


def weak_view(image: np.ndarray, rng, config: AugmentConfig = DEFAULT_AUGMENT) -> np.ndarray:
    """Affine-only view: rotation (reflection padded) and flips."""
    img = _check_image(image)
    p = config.apply_prob
    if rng.random() < p:
        angle = float(rng.uniform(-config.rotation_degrees, config.rotation_degrees))
        img = _rotate(img, angle)
    if rng.random() < p:
        img = img[::-1, :, :]
    if rng.random() < p:
        img = img[:, ::-1, :]
    return np.ascontiguousarray(img, dtype=np.float32)


def strong_view(image: np.ndarray, rng, config: AugmentConfig = DEFAULT_AUGMENT) -> np.ndarray:
    """Weak pipeline plus blur and channel-appropriate intensity jitter.

    Color jitter (brightness/contrast/saturation) only applies to 3-channel
    images; single-channel images get brightness/contrast jitter instead.
    Output is clamped back to [0, 1].
    """
    img = weak_view(image, rng, config)
    p = config.apply_prob
    if rng.random() < p:
        sigma = float(rng.uniform(*config.blur_sigma))
        img = _gaussian_blur(img, sigma)
    if rng.random() < p:
        lo, hi = config.jitter_range
        if img.shape[2] == 3:
            b, c, s = (float(v) for v in rng.uniform(lo, hi, size=3))
            img = _color_jitter(img, b, c, s)
        else:
            b, c = (float(v) for v in rng.uniform(lo, hi, size=2))
            img = _gray_jitter(img, b, c)
    return np.clip(img, 0.0, 1.0).astype(np.float32, copy=False)


def make_triplet(image: np.ndarray, rng, source_index: int = -1,
                 config: AugmentConfig = DEFAULT_AUGMENT) -> ViewTriplet:
    """One weak view plus two independently drawn strong views."""
    return ViewTriplet(
        weak=weak_view(image, rng, config),
        strong_a=strong_view(image, rng, config),
        strong_b=strong_view(image, rng, config),
        source_index=source_index,
    )
