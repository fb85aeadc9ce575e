"""Seeded training-time augmentation: independent flips plus photometric jitter.

Random draws come from numpy's Philox counter-based generator. Its key is
derived from ``(seed, image_id)`` and the draws are taken in a fixed order,
so draw ``k`` of a sample does not depend on which samples were augmented
before it, or in what order::

    0 flip_h   1 flip_v   2 brightness   3 contrast   4 saturation   5 hue   6 gamma
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_interval, check_probability, check_rgb_image
from .dataset import AnnotationRecord, ImageRecord
from .exceptions import ConfigError
from .geometry import BBox, BinaryMask, rle_decode, rle_encode
from .pipeline import LUMA_WEIGHTS

HORIZONTAL = "horizontal"
VERTICAL = "vertical"


@dataclass(frozen=True)
class AugmentConfig:
    p_flip_h: float = 0.5
    p_flip_v: float = 0.5
    brightness_range: tuple = (0.9, 1.1)
    contrast_range: tuple = (0.9, 1.1)
    saturation_range: tuple = (0.99, 1.01)
    hue_range: tuple = (-0.01, 0.01)
    gamma_range: tuple = (0.8, 1.2)

    def __post_init__(self):
        check_probability(self.p_flip_h, "p_flip_h")
        check_probability(self.p_flip_v, "p_flip_v")
        for name in ("brightness_range", "contrast_range", "saturation_range"):
            lo, hi = check_interval(getattr(self, name), name)
            if lo < 0:
                raise ConfigError(f"{name} must be non-negative")
            object.__setattr__(self, name, (lo, hi))
        object.__setattr__(self, "hue_range", check_interval(self.hue_range, "hue_range"))
        object.__setattr__(self, "gamma_range",
                           check_interval(self.gamma_range, "gamma_range", lower_exclusive=0.0))

    @classmethod
    def identity(cls) -> "AugmentConfig":
        return cls(0.0, 0.0, (1.0, 1.0), (1.0, 1.0), (1.0, 1.0), (0.0, 0.0), (1.0, 1.0))


@dataclass
class AugmentSample:
    """An RGB image in [0, 1] with mask-form annotations."""

    image: np.ndarray
    annotations: list = field(default_factory=list)
    image_id: object = None
    params: dict = field(default_factory=dict)

    @property
    def width(self) -> int:
        return self.image.shape[1]

    @property
    def height(self) -> int:
        return self.image.shape[0]

    @classmethod
    def from_record(cls, record: ImageRecord, image) -> "AugmentSample":
        """Pair an image with its record; polygons are rasterized so flips stay exact."""
        img = check_rgb_image(image)
        if img.shape[:2] != (record.height, record.width):
            raise ValueError(f"image is {img.shape[1]}x{img.shape[0]}, "
                             f"record says {record.width}x{record.height}")
        anns = [AnnotationRecord(a.object_id, a.label, rle=record.mask(a), iscrowd=a.iscrowd)
                for a in record.annotations]
        return cls(img, anns, record.image_id)


def _flip_grid(grid, axis):
    if axis == HORIZONTAL:
        return grid[:, ::-1]
    if axis == VERTICAL:
        return grid[::-1]
    raise ValueError(f"axis must be {HORIZONTAL!r} or {VERTICAL!r}, got {axis!r}")


def flip_mask(mask: BinaryMask, axis: str) -> BinaryMask:
    return rle_encode(_flip_grid(rle_decode(mask), axis))


def flip_bbox(box: BBox, axis: str, width: int, height: int) -> BBox:
    """Mirror a box: ``x' = W - x`` horizontally, ``y' = H - y`` vertically."""
    if axis == HORIZONTAL:
        return BBox(width - box.x_max, box.y_min, width - box.x_min, box.y_max)
    if axis == VERTICAL:
        return BBox(box.x_min, height - box.y_max, box.x_max, height - box.y_min)
    raise ValueError(f"axis must be {HORIZONTAL!r} or {VERTICAL!r}, got {axis!r}")


def flip(sample: AugmentSample, axis: str) -> AugmentSample:
    image = np.ascontiguousarray(_flip_grid(sample.image, axis))
    anns = []
    for a in sample.annotations:
        if a.rle is None:
            raise ValueError("flip expects mask-form annotations; use AugmentSample.from_record")
        anns.append(AnnotationRecord(a.object_id, a.label, rle=flip_mask(a.rle, axis),
                                     iscrowd=a.iscrowd))
    return AugmentSample(image, anns, sample.image_id, dict(sample.params))


def _check_factor(value, name, interval, cfg_range):
    if cfg_range is not None:
        lo, hi = cfg_range
        if not lo <= value <= hi:
            raise ConfigError(f"{name}={value} outside configured range [{lo}, {hi}]")
    elif not interval(value):
        raise ConfigError(f"{name}={value} is not a valid factor")


def adjust_photometric(image, brightness=1.0, contrast=1.0, saturation=1.0, hue=0.0,
                       gamma=1.0, cfg: Optional[AugmentConfig] = None) -> np.ndarray:
    """Apply brightness, contrast, saturation, hue and gamma, in that order.

    - brightness: ``v * f``
    - contrast: ``m + (v - m) * f`` with ``m`` the mean luminance of the image
    - saturation: ``l + (v - l) * f`` with ``l`` the per-pixel luminance
    - hue: rotate the HSV hue by ``hue * 360`` degrees
    - gamma: ``v ** gamma``

    Values are clamped to [0, 1] after every stage. With ``cfg`` given, each
    factor must lie in the matching configured range.
    """
    img = check_rgb_image(image)
    _check_factor(brightness, "brightness", lambda v: v >= 0, cfg and cfg.brightness_range)
    _check_factor(contrast, "contrast", lambda v: v >= 0, cfg and cfg.contrast_range)
    _check_factor(saturation, "saturation", lambda v: v >= 0, cfg and cfg.saturation_range)
    _check_factor(hue, "hue", lambda v: -0.5 <= v <= 0.5, cfg and cfg.hue_range)
    _check_factor(gamma, "gamma", lambda v: v > 0, cfg and cfg.gamma_range)

    out = np.clip(img * brightness, 0.0, 1.0)
    mean_lum = float((out @ LUMA_WEIGHTS).mean())
    out = np.clip(mean_lum + (out - mean_lum) * contrast, 0.0, 1.0)
    lum = (out @ LUMA_WEIGHTS)[..., None]
    out = np.clip(lum + (out - lum) * saturation, 0.0, 1.0)
    if hue != 0.0:
        hsv = rgb_to_hsv(out)
        hsv[..., 0] = np.mod(hsv[..., 0] + hue, 1.0)
        out = np.clip(hsv_to_rgb(hsv), 0.0, 1.0)
    out = np.clip(out ** gamma, 0.0, 1.0)
    return out


def sample_generator(seed: int, image_id) -> np.random.Generator:
    """Philox generator keyed by a SHA-256 digest of ``(seed, image_id)``."""
    digest = hashlib.sha256(f"foramkit.augment:{int(seed)}:{image_id!r}".encode()).digest()
    return np.random.Generator(np.random.Philox(key=int.from_bytes(digest[:16], "little")))


def draw_params(cfg: AugmentConfig, seed: int, image_id) -> dict:
    u = sample_generator(seed, image_id).random(7)
    # Clamped so rounding can never leave the configured interval.
    lerp = lambda r, t: float(min(max(r[0] + (r[1] - r[0]) * t, r[0]), r[1]))
    return {
        "flip_h": bool(u[0] < cfg.p_flip_h),
        "flip_v": bool(u[1] < cfg.p_flip_v),
        "brightness": lerp(cfg.brightness_range, u[2]),
        "contrast": lerp(cfg.contrast_range, u[3]),
        "saturation": lerp(cfg.saturation_range, u[4]),
        "hue": lerp(cfg.hue_range, u[5]),
        "gamma": lerp(cfg.gamma_range, u[6]),
    }


def augment(sample: AugmentSample, cfg: AugmentConfig = AugmentConfig(), seed: int = 0) -> AugmentSample:
    """Deterministically augment one sample; geometry changes only through flips."""
    p = draw_params(cfg, seed, sample.image_id)
    out = sample
    if p["flip_h"]:
        out = flip(out, HORIZONTAL)
    if p["flip_v"]:
        out = flip(out, VERTICAL)
    image = adjust_photometric(out.image, p["brightness"], p["contrast"], p["saturation"],
                               p["hue"], p["gamma"], cfg=cfg)
    return AugmentSample(image, list(out.annotations), sample.image_id, p)


class RandomAugmenter(TransformerMixin, BaseEstimator):
    """Transformer over lists of :class:`AugmentSample`.

    ``seed`` is combined with each sample's ``image_id``; call with a new
    seed per epoch for fresh draws.
    """

    def __init__(self, p_flip_h=0.5, p_flip_v=0.5, brightness_range=(0.9, 1.1),
                 contrast_range=(0.9, 1.1), saturation_range=(0.99, 1.01),
                 hue_range=(-0.01, 0.01), gamma_range=(0.8, 1.2), seed=0):
        self.p_flip_h = p_flip_h
        self.p_flip_v = p_flip_v
        self.brightness_range = brightness_range
        self.contrast_range = contrast_range
        self.saturation_range = saturation_range
        self.hue_range = hue_range
        self.gamma_range = gamma_range
        self.seed = seed

    def _config(self) -> AugmentConfig:
        params = self.get_params()
        return AugmentConfig(**{f.name: params[f.name] for f in fields(AugmentConfig)})

    def __sklearn_is_fitted__(self):
        return True

    def fit(self, X=None, y=None):
        self.config_ = self._config()
        return self

    def transform(self, X):
        cfg = self._config()
        return [augment(s, cfg, self.seed) for s in X]
