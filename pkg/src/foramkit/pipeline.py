"""Classical detector used to bootstrap ground truth.

grayscale -> Gaussian blur -> Gaussian blur -> global threshold ->
connected components -> per-object masks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np
from PIL import Image
from scipy import ndimage
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_gray_image, check_positive, check_probability, as_unit_float
from .dataset import Detection
from .exceptions import ConfigError
from .geometry import BBox, BinaryMask, mask_to_bbox, rle_encode

__all__ = [
    "PipelineConfig",
    "to_grayscale",
    "gaussian_kernel",
    "gaussian_blur",
    "threshold",
    "connected_components",
    "extract_objects",
    "detect",
    "read_image",
    "ClassicalDetector",
    "GaussianSmoother",
]

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class PipelineConfig:
    # Defaults are starting points; real plates were tuned per image.
    sigma1: float = 2.0
    sigma2: float = 2.0
    threshold: float = 0.5
    polarity: str = "light"
    connectivity: int = 8
    min_area: int = 50

    def __post_init__(self):
        check_positive(self.sigma1, "sigma1")
        check_positive(self.sigma2, "sigma2")
        check_probability(self.threshold, "threshold")
        if self.polarity not in ("light", "dark"):
            raise ConfigError(f"polarity must be 'light' or 'dark', got {self.polarity!r}")
        if self.connectivity not in (4, 8):
            raise ConfigError(f"connectivity must be 4 or 8, got {self.connectivity!r}")
        if int(self.min_area) != self.min_area or self.min_area < 1:
            raise ConfigError(f"min_area must be an integer >= 1, got {self.min_area!r}")


def read_image(path) -> np.ndarray:
    """Read an 8/16-bit PNG or TIFF into a numpy array, keeping its bit depth."""
    with Image.open(Path(path)) as im:
        if im.mode in ("I;16", "I;16B", "I;16L"):
            return np.asarray(im, dtype=np.uint16)
        if im.mode == "I":
            return np.asarray(im).astype(np.uint16)
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        return np.asarray(im)


def to_grayscale(image) -> np.ndarray:
    """Luminance ``0.299 R + 0.587 G + 0.114 B`` in [0, 1].

    2-D inputs are treated as already grayscale and only rescaled.
    """
    arr = as_unit_float(image)
    if arr.ndim == 2:
        return arr
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"unsupported image shape {arr.shape}; expected (H, W) or (H, W, 3)")
    # Dividing by the float sum of the weights keeps pure white at exactly 1.0.
    return np.clip(arr @ LUMA_WEIGHTS / LUMA_WEIGHTS.sum(), 0.0, 1.0)


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1-D sampled Gaussian of radius ``ceil(3 sigma)``."""
    sigma = check_positive(sigma, "sigma")
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _convolve_axis(img, kernel, axis):
    radius = kernel.size // 2
    pad = [(0, 0), (0, 0)]
    pad[axis] = (radius, radius)
    # 'symmetric' mirrors about the edge and repeats the border pixel.
    padded = np.pad(img, pad, mode="symmetric")
    n = img.shape[axis]
    out = np.zeros_like(img)
    for t, w in enumerate(kernel):
        out += w * (padded[t:t + n, :] if axis == 0 else padded[:, t:t + n])
    return out


def gaussian_blur(img, sigma: float) -> np.ndarray:
    """Separable Gaussian smoothing with mirrored borders."""
    img = check_gray_image(img)
    kernel = gaussian_kernel(sigma)
    out = _convolve_axis(_convolve_axis(img, kernel, 0), kernel, 1)
    return np.clip(out, 0.0, 1.0)


def threshold(img, level: float, polarity: str = "light") -> np.ndarray:
    img = np.asarray(img)
    if polarity == "light":
        return img > level
    if polarity == "dark":
        return img < level
    raise ConfigError(f"polarity must be 'light' or 'dark', got {polarity!r}")


def _find(parent, i):
    root = i
    while parent[root] != root:
        root = parent[root]
    while parent[i] != root:
        parent[i], i = root, parent[i]
    return root


def connected_components(grid, connectivity: int = 8) -> np.ndarray:
    """Label foreground components with a two-pass union-find over row runs.

    Labels are 1..K in the order their first pixel is met in a row-major
    scan; background is 0.
    """
    if connectivity not in (4, 8):
        raise ConfigError(f"connectivity must be 4 or 8, got {connectivity!r}")
    g = np.asarray(grid).astype(bool)
    if g.ndim != 2:
        raise ValueError(f"expected a 2-D grid, got shape {g.shape}")
    height, width = g.shape
    labels = np.zeros((height, width), dtype=np.int32)
    if not g.any():
        return labels

    edges = np.diff(np.pad(g.astype(np.int8), ((0, 0), (1, 1))), axis=1)
    run_row, run_start = np.nonzero(edges == 1)
    _, run_end = np.nonzero(edges == -1)  # exclusive
    run_row, run_start, run_end = run_row.tolist(), run_start.tolist(), run_end.tolist()
    n_runs = len(run_row)
    row_first = np.searchsorted(run_row, np.arange(height + 1)).tolist()

    slack = 1 if connectivity == 8 else 0
    parent = list(range(n_runs))
    # First pass: link each run to the overlapping runs of the previous row.
    for r in range(1, height):
        i, i_end = row_first[r - 1], row_first[r]
        j, j_end = row_first[r], row_first[r + 1]
        while i < i_end and j < j_end:
            if run_start[i] < run_end[j] + slack and run_start[j] < run_end[i] + slack:
                a, b = _find(parent, i), _find(parent, j)
                if a != b:
                    if a < b:
                        parent[b] = a
                    else:
                        parent[a] = b
            if run_end[i] < run_end[j]:
                i += 1
            else:
                j += 1

    # Second pass: compact labels in raster order and paint.
    final = {}
    for k in range(n_runs):
        root = _find(parent, k)
        lab = final.get(root)
        if lab is None:
            lab = final[root] = len(final) + 1
        labels[run_row[k], run_start[k]:run_end[k]] = lab
    return labels


class ExtractedObject(NamedTuple):
    mask: BinaryMask
    bbox: BBox
    area: int
    label: int


def extract_objects(labels, min_area: int = 1) -> list:
    """One entry per component whose pixel area is at least ``min_area``."""
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ValueError("label map must be 2-D")
    areas = np.bincount(labels.ravel())
    objects = []
    for k, sl in enumerate(ndimage.find_objects(labels), start=1):
        if sl is None or areas[k] < min_area:
            continue
        grid = np.zeros(labels.shape, dtype=bool)
        grid[sl] = labels[sl] == k
        mask = rle_encode(grid)
        objects.append(ExtractedObject(mask, mask_to_bbox(mask), int(areas[k]), k))
    return objects


def label_image(image, cfg: PipelineConfig = PipelineConfig()) -> np.ndarray:
    gray = to_grayscale(image)
    smooth = gaussian_blur(gaussian_blur(gray, cfg.sigma1), cfg.sigma2)
    return connected_components(threshold(smooth, cfg.threshold, cfg.polarity), cfg.connectivity)


def detect(image, cfg: PipelineConfig = PipelineConfig(), image_id=None) -> list:
    """Run the full pipeline; detections carry score 1.0 and no class."""
    labels = label_image(image, cfg)
    return [Detection(image_id, None, 1.0, obj.mask, obj.bbox)
            for obj in extract_objects(labels, cfg.min_area)]


class ClassicalDetector(BaseEstimator):
    """Estimator wrapper around :func:`detect`.

    The detector has no learned state, so ``fit`` only validates parameters.

    Examples
    --------
    >>> det = ClassicalDetector(sigma1=1.5, threshold=0.4)
    >>> det.get_params()["threshold"]
    0.4
    """

    def __init__(self, sigma1=2.0, sigma2=2.0, threshold=0.5, polarity="light",
                 connectivity=8, min_area=50):
        self.sigma1 = sigma1
        self.sigma2 = sigma2
        self.threshold = threshold
        self.polarity = polarity
        self.connectivity = connectivity
        self.min_area = min_area

    def _config(self) -> PipelineConfig:
        return PipelineConfig(**self.get_params())

    def __sklearn_is_fitted__(self):
        return True

    def fit(self, X=None, y=None):
        self.config_ = self._config()
        return self

    def predict(self, X, image_ids: Optional[list] = None) -> list:
        """Detections for each image in ``X`` (a list of arrays)."""
        cfg = self._config()
        if isinstance(X, np.ndarray) and X.ndim in (2, 3) and (X.ndim == 2 or X.shape[-1] == 3):
            X = [X]
        ids = image_ids if image_ids is not None else [None] * len(X)
        return [detect(img, cfg, image_id=i) for img, i in zip(X, ids)]

    def transform(self, X) -> list:
        """Label maps rather than detections."""
        cfg = self._config()
        if isinstance(X, np.ndarray) and X.ndim == 2:
            X = [X]
        return [label_image(img, cfg) for img in X]


class GaussianSmoother(TransformerMixin, BaseEstimator):
    def __init__(self, sigma=2.0):
        self.sigma = sigma

    def __sklearn_is_fitted__(self):
        return True

    def fit(self, X=None, y=None):
        check_positive(self.sigma, "sigma")
        return self

    def transform(self, X):
        X = np.asarray(X)
        if X.ndim == 2:
            return gaussian_blur(X, self.sigma)
        return np.stack([gaussian_blur(x, self.sigma) for x in X])
