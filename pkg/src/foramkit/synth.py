"""Synthetic microscope-plate scenes with exact ground truth.

Objects are superellipses on a dark plate. Benthic and planktic shells are
smooth; agglutinated shells and sediment grains get a speckled texture, and
grains additionally get an irregular, radially perturbed outline.

Every object draws from its own stream, seeded by ``(scene seed, object
index)``. A scene with ``n + k`` objects therefore starts with the same
``n`` objects as the scene with ``n``, which makes density sweeps nested.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from math import gamma as gamma_fn
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image
from scipy import ndimage

from ._validation import check_interval
from .dataset import CLASS_NAMES, AnnotationRecord, ClassLabel, ImageRecord, Manifest, save_manifest
from .exceptions import ConfigError, PlacementError
from .geometry import rle_encode

logger = logging.getLogger(__name__)

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0

# RGB reflectance per class. Hues differ but luminance is held near 0.85 so that,
# against the default plate, edges blur to roughly the default threshold.
CLASS_COLORS = {
    ClassLabel.AGGLUTINATED: (0.95, 0.84, 0.68),
    ClassLabel.BENTHIC: (0.88, 0.86, 0.80),
    ClassLabel.PLANKTIC: (0.84, 0.85, 0.90),
    ClassLabel.SEDIMENT: (0.90, 0.85, 0.76),
}
SPECKLED = {ClassLabel.AGGLUTINATED, ClassLabel.SEDIMENT}
PLATE_TINT = np.array([1.0, 1.0, 1.12])


@dataclass(frozen=True)
class SceneConfig:
    """Scene parameters.

    ``density``, when given, overrides ``n_objects`` and counts objects per
    100 x 100 pixels. ``class_mix`` is aligned with the four class ids.
    ``overlap`` is ``"forbid"`` (no shared pixels and at least ``min_gap``
    pixels of clearance) or ``"allow"`` (pairwise mask IoU at most
    ``max_pair_iou``). ``background`` and ``foreground`` are (mean, std)
    intensity pairs; the foreground pair scales the class colors.
    """

    width: int = 256
    height: int = 256
    n_objects: int = 10
    density: Optional[float] = None
    class_mix: tuple = (0.25, 0.25, 0.25, 0.25)
    size_range: tuple = (18.0, 36.0)
    overlap: str = "forbid"
    max_pair_iou: float = 0.0
    min_gap: int = 0
    background: tuple = (0.25, 0.02)
    foreground: tuple = (1.0, 0.05)
    seed: int = 0
    image_id: object = 0
    phase: int = 3
    max_attempts: int = 1000

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ConfigError("scene dimensions must be >= 1")
        if self.n_objects < 0:
            raise ConfigError("n_objects must be >= 0")
        if self.density is not None and self.density < 0:
            raise ConfigError("density must be >= 0")
        mix = np.asarray(self.class_mix, dtype=np.float64)
        if mix.shape != (len(ClassLabel),) or (mix < 0).any() or not np.isclose(mix.sum(), 1.0):
            raise ConfigError(f"class_mix must be {len(ClassLabel)} non-negative proportions summing to 1")
        object.__setattr__(self, "class_mix", tuple(float(v) for v in mix))
        lo, hi = check_interval(self.size_range, "size_range", lower_exclusive=0.0)
        object.__setattr__(self, "size_range", (lo, hi))
        if self.overlap not in ("forbid", "allow"):
            raise ConfigError(f"overlap must be 'forbid' or 'allow', got {self.overlap!r}")
        if not 0.0 <= self.max_pair_iou < 1.0:
            raise ConfigError("max_pair_iou must lie in [0, 1)")
        if self.min_gap < 0:
            raise ConfigError("min_gap must be >= 0")
        if self.phase not in (1, 2, 3):
            raise ConfigError("phase must be 1, 2 or 3")
        if self.max_attempts < 1:
            raise ConfigError("max_attempts must be >= 1")

    @property
    def object_count(self) -> int:
        if self.density is not None:
            return int(round(self.density * self.width * self.height / 1e4))
        return int(self.n_objects)

    @property
    def density_per_10k(self) -> float:
        return self.object_count * 1e4 / (self.width * self.height)


def _stream(*key) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(k) for k in key])))


def _superellipse_area_factor(n: float) -> float:
    # Area of |x/a|^n + |y/b|^n <= 1 is 4ab * G(1+1/n)^2 / G(1+2/n).
    return 4.0 * gamma_fn(1.0 + 1.0 / n) ** 2 / gamma_fn(1.0 + 2.0 / n)


def _draw_shape(rng, label, cfg: SceneConfig):
    d = rng.uniform(*cfg.size_range)
    aspect = rng.uniform(0.65, 1.0)
    theta = rng.uniform(0.0, np.pi)
    if label in SPECKLED:
        n = rng.uniform(1.7, 3.0)
    else:
        n = rng.uniform(2.0, 2.6)
    ab = np.pi * d * d / 4.0 / _superellipse_area_factor(n)
    a = np.sqrt(ab / aspect)
    b = aspect * a
    if label == ClassLabel.SEDIMENT:
        harmonics = rng.uniform(0.0, 0.08, size=3)
        phases = rng.uniform(0.0, 2 * np.pi, size=3)
    else:
        harmonics = np.zeros(3)
        phases = np.zeros(3)
    reach = a * (1.0 + harmonics.sum())
    return dict(a=a, b=b, n=n, theta=theta, harmonics=harmonics, phases=phases, reach=reach)


def _shape_mask(shape, cx, cy, width, height):
    """Full-canvas boolean mask and the pixel window it occupies."""
    r = shape["reach"] + 1.0
    c0, c1 = max(int(np.floor(cx - r)), 0), min(int(np.ceil(cx + r)), width - 1)
    r0, r1 = max(int(np.floor(cy - r)), 0), min(int(np.ceil(cy + r)), height - 1)
    xs = np.arange(c0, c1 + 1) + 0.5 - cx
    ys = (np.arange(r0, r1 + 1) + 0.5 - cy)[:, None]
    ct, st = np.cos(shape["theta"]), np.sin(shape["theta"])
    u = xs * ct + ys * st
    v = -xs * st + ys * ct
    rho = (np.abs(u / shape["a"]) ** shape["n"] + np.abs(v / shape["b"]) ** shape["n"]) ** (1.0 / shape["n"])
    phi = np.arctan2(v, u)
    limit = np.ones_like(rho)
    for k, (amp, ph) in enumerate(zip(shape["harmonics"], shape["phases"]), start=2):
        limit = limit + amp * np.cos(k * phi + ph)
    window = (slice(r0, r1 + 1), slice(c0, c1 + 1))
    mask = np.zeros((height, width), dtype=bool)
    mask[window] = rho <= limit
    return mask, window, rho / limit


def _class_sequence(cfg: SceneConfig, count: int) -> list:
    # Golden-ratio (Weyl) sequence: shares stay within ~1/count of class_mix
    # and object i's class does not depend on how many objects follow it.
    offset = _stream(cfg.seed, 2).random()
    cum = np.cumsum(cfg.class_mix)
    cum[-1] = 1.0 + 1e-12
    labels = []
    for i in range(count):
        u = (offset + i * GOLDEN) % 1.0
        labels.append(ClassLabel(int(np.searchsorted(cum, u, side="right")) + 1))
    return labels


def _conflicts(mask, placed, cfg: SceneConfig, occupied, structure):
    if cfg.overlap == "forbid":
        probe = mask
        if cfg.min_gap > 0:
            probe = ndimage.binary_dilation(mask, structure=structure, iterations=cfg.min_gap)
        return bool((probe & occupied).any())
    area = mask.sum()
    for other in placed:
        inter = np.count_nonzero(mask & other)
        if inter == 0:
            continue
        union = area + other.sum() - inter
        if inter / union > cfg.max_pair_iou:
            return True
    return False


def generate_scene(cfg: SceneConfig):
    """Render one scene.

    Returns ``(image, record)``: an ``(H, W, 3)`` float image in [0, 1] and an
    :class:`ImageRecord` whose RLE masks are exactly the rendered footprints.
    Raises :class:`PlacementError` if an object cannot be placed in
    ``cfg.max_attempts`` tries.
    """
    W, H = cfg.width, cfg.height
    count = cfg.object_count
    labels = _class_sequence(cfg, count)
    occupied = np.zeros((H, W), dtype=bool)
    structure = np.ones((3, 3), dtype=bool)
    placed = []
    shapes = []
    for i, label in enumerate(labels):
        rng = _stream(cfg.seed, 1, i)
        for _attempt in range(cfg.max_attempts):
            shape = _draw_shape(rng, label, cfg)
            r = shape["reach"]
            if 2 * r >= W or 2 * r >= H:
                continue
            cx = rng.uniform(r, W - r)
            cy = rng.uniform(r, H - r)
            mask, window, rho = _shape_mask(shape, cx, cy, W, H)
            if not mask.any() or _conflicts(mask, placed, cfg, occupied, structure):
                continue
            break
        else:
            raise PlacementError(
                f"could not place object {i + 1} of {count} at density "
                f"{cfg.density_per_10k:.2f} objects per 100x100 px within {cfg.max_attempts} attempts")
        placed.append(mask)
        occupied |= mask
        shapes.append((label, window, rho, rng))

    noise = _stream(cfg.seed, 0)
    bg_mean, bg_std = cfg.background
    plate = bg_mean + bg_std * noise.standard_normal((H, W))
    image = plate[..., None] * PLATE_TINT[None, None, :]
    fg_mean, fg_std = cfg.foreground
    for (label, window, rho, rng), mask in zip(shapes, placed):
        local = mask[window]
        color = np.asarray(CLASS_COLORS[label]) * fg_mean
        tex_amp = 3.0 * fg_std if label in SPECKLED else fg_std
        texture = 1.0 + tex_amp * rng.standard_normal(local.shape)
        shade = 1.0 - 0.08 * np.clip(rho, 0.0, 1.0) ** 2
        patch = image[window]
        patch[local] = (color[None, None, :] * (texture * shade)[..., None])[local]
    image = np.clip(image, 0.0, 1.0)

    anns = [AnnotationRecord(k + 1, label, rle=rle_encode(mask))
            for k, ((label, *_), mask) in enumerate(zip(shapes, placed))]
    record = ImageRecord(cfg.image_id, f"synth_{cfg.image_id}.png", W, H, cfg.phase, anns)
    return image, record


def scene_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1, dtype=np.uint64)[0])


def to_uint8(image) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def generate_corpus(template: SceneConfig, n_images: int, seed: int = 0, out_dir=None,
                    name: str = "synthetic"):
    """Generate ``n_images`` scenes with per-image seeds derived from ``(seed, index)``.

    With ``out_dir`` the PNGs and ``manifest.json`` are written there.
    Returns ``(manifest, images)``.
    """
    if n_images < 1:
        raise ConfigError("n_images must be >= 1")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    records, images = [], []
    for i in range(n_images):
        cfg = replace(template, seed=scene_seed(seed, i), image_id=i)
        img, rec = generate_scene(cfg)
        rec.file_name = f"img_{i:04d}.png"
        if out is not None:
            Image.fromarray(to_uint8(img)).save(out / rec.file_name)
        records.append(rec)
        images.append(img)
    manifest = Manifest(records, name=name, version="1", root=out)
    if out is not None:
        save_manifest(manifest, out / "manifest.json")
    logger.info("generated %d scenes (%d objects)", n_images,
                sum(len(r.annotations) for r in records))
    return manifest, images
