"""Mask and box algebra.

Masks are stored as column-major run-length encodings that start with the
count of leading zeros, the same layout COCO uses, so prediction dumps from
other tools can be read without conversion. Pixel ``(i, j)`` is row ``i``,
column ``j``; its center sits at ``(j + 0.5, i + 0.5)`` in image coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .exceptions import EmptyMaskError, MalformedMaskError

__all__ = [
    "BBox",
    "BinaryMask",
    "rasterize_polygon",
    "rle_encode",
    "rle_decode",
    "rle_to_string",
    "rle_from_string",
    "mask_iou",
    "bbox_iou",
    "mask_to_bbox",
]


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in continuous image coordinates, origin top-left."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        for name in ("x_min", "y_min", "x_max", "y_max"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"BBox.{name} must be finite")
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError(f"invalid box {self!r}: min corner exceeds max corner")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    def to_xywh(self) -> list[float]:
        return [self.x_min, self.y_min, self.width, self.height]

    @classmethod
    def from_xywh(cls, xywh: Sequence[float]) -> "BBox":
        x, y, w, h = (float(v) for v in xywh)
        return cls(x, y, x + w, y + h)

    def contains(self, other: "BBox") -> bool:
        return (self.x_min <= other.x_min and self.y_min <= other.y_min
                and self.x_max >= other.x_max and self.y_max >= other.y_max)


@dataclass(frozen=True, eq=True)
class BinaryMask:
    """Run-length encoded binary mask.

    ``counts`` alternates zero-runs and one-runs over the column-major
    flattening of a ``height x width`` grid, beginning with a zero-run.
    """

    width: int
    height: int
    counts: tuple[int, ...]

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise MalformedMaskError(f"mask dimensions must be >= 1, got {self.width}x{self.height}")
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        if any(c < 0 for c in self.counts):
            raise MalformedMaskError("run lengths must be non-negative")
        total = sum(self.counts)
        if total != self.width * self.height:
            raise MalformedMaskError(
                f"run lengths sum to {total}, expected {self.width}x{self.height}="
                f"{self.width * self.height}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @cached_property
    def area(self) -> int:
        return int(sum(self.counts[1::2]))

    def to_array(self) -> np.ndarray:
        return rle_decode(self)

    @classmethod
    def from_array(cls, grid) -> "BinaryMask":
        return rle_encode(grid)

    @classmethod
    def empty(cls, width: int, height: int) -> "BinaryMask":
        return cls(width, height, (width * height,))

    def to_string(self) -> str:
        return rle_to_string(self.counts)

    @classmethod
    def from_string(cls, s: str, width: int, height: int) -> "BinaryMask":
        return cls(width, height, tuple(rle_from_string(s)))

    def to_coco(self) -> dict:
        return {"size": [self.height, self.width], "counts": self.to_string()}

    @classmethod
    def from_coco(cls, obj: dict) -> "BinaryMask":
        height, width = (int(v) for v in obj["size"])
        counts = obj["counts"]
        if isinstance(counts, str):
            return cls.from_string(counts, width, height)
        return cls(width, height, tuple(counts))


def rle_encode(grid) -> BinaryMask:
    """Encode a ``(height, width)`` binary grid."""
    grid = np.asarray(grid)
    if grid.ndim != 2 or grid.shape[0] < 1 or grid.shape[1] < 1:
        raise ValueError(f"expected a non-empty 2-D grid, got shape {grid.shape}")
    height, width = grid.shape
    flat = grid.astype(bool).ravel(order="F")
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    counts = np.diff(bounds).tolist()
    if flat[0]:
        counts.insert(0, 0)
    return BinaryMask(width, height, tuple(counts))


def rle_decode(mask: BinaryMask) -> np.ndarray:
    """Decode to a ``(height, width)`` boolean array."""
    counts = np.asarray(mask.counts, dtype=np.int64)
    total = int(counts.sum()) if counts.size else 0
    if total != mask.width * mask.height:
        raise MalformedMaskError(f"run lengths sum to {total}, expected {mask.width * mask.height}")
    values = np.zeros(counts.size, dtype=bool)
    values[1::2] = True
    flat = np.repeat(values, counts)
    return flat.reshape((mask.height, mask.width), order="F")


def rle_to_string(counts: Sequence[int]) -> str:
    """COCO's compact ASCII form: delta-coded against the run two back, 5 bits per char."""
    out = []
    for i, x in enumerate(counts):
        x = int(x)
        if i > 2:
            x -= int(counts[i - 2])
        more = True
        while more:
            c = x & 0x1F
            x >>= 5
            more = (x != -1) if (c & 0x10) else (x != 0)
            if more:
                c |= 0x20
            out.append(chr(c + 48))
    return "".join(out)


def rle_from_string(s: str) -> list[int]:
    counts: list[int] = []
    p = 0
    n = len(s)
    while p < n:
        x = 0
        k = 0
        more = True
        while more:
            if p >= n:
                raise MalformedMaskError("truncated RLE string")
            c = ord(s[p]) - 48
            if c < 0 or c > 63:
                raise MalformedMaskError(f"invalid RLE character {s[p]!r}")
            x |= (c & 0x1F) << (5 * k)
            more = bool(c & 0x20)
            p += 1
            k += 1
            if not more and (c & 0x10):
                x |= -1 << (5 * k)
        if len(counts) > 2:
            x += counts[-2]
        counts.append(x)
    return counts


def rasterize_polygon(vertices, width: int, height: int) -> BinaryMask:
    """Fill a polygon with the even-odd rule, sampling pixel centers.

    Vertices may lie outside the canvas; only canvas pixels are tested, which
    is equivalent to clipping. A polygon with no covered pixel centers yields
    an empty mask.
    """
    if width < 1 or height < 1:
        raise ValueError("canvas must be at least 1x1")
    pts = np.asarray(vertices, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 3:
        raise ValueError("polygon needs at least 3 (x, y) vertices")
    grid = np.zeros((height, width), dtype=bool)

    # Restrict work to the pixel centers inside the polygon's bounding box.
    c0 = max(int(np.ceil(pts[:, 0].min() - 0.5)), 0)
    c1 = min(int(np.floor(pts[:, 0].max() - 0.5)), width - 1)
    r0 = max(int(np.ceil(pts[:, 1].min() - 0.5)), 0)
    r1 = min(int(np.floor(pts[:, 1].max() - 0.5)), height - 1)
    if c0 > c1 or r0 > r1:
        return rle_encode(grid)

    px = np.arange(c0, c1 + 1, dtype=np.float64) + 0.5
    py = np.arange(r0, r1 + 1, dtype=np.float64)[:, None] + 0.5
    inside = np.zeros((py.size, px.size), dtype=bool)
    x1, y1 = pts[:, 0], pts[:, 1]
    x2, y2 = np.roll(x1, -1), np.roll(y1, -1)
    for ax, ay, bx, by in zip(x1, y1, x2, y2):
        if ay == by:
            continue
        straddle = (ay > py) != (by > py)
        x_cross = ax + (py - ay) * (bx - ax) / (by - ay)
        inside ^= straddle & (px < x_cross)
    grid[r0:r1 + 1, c0:c1 + 1] = inside
    return rle_encode(grid)


def _check_same_shape(a: BinaryMask, b: BinaryMask):
    if (a.width, a.height) != (b.width, b.height):
        raise ValueError(
            f"mask dimensions differ: {a.width}x{a.height} vs {b.width}x{b.height}")


def mask_iou(a: BinaryMask, b: BinaryMask, crowd: bool = False) -> float:
    """IoU of two masks, or ``|a & b| / |a|`` when ``b`` is a crowd region.

    Empty denominators give 0.
    """
    _check_same_shape(a, b)
    inter = int(np.count_nonzero(rle_decode(a) & rle_decode(b)))
    denom = a.area if crowd else a.area + b.area - inter
    return inter / denom if denom > 0 else 0.0


def bbox_iou(a: BBox, b: BBox, crowd: bool = False) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    inter = iw * ih if (iw > 0 and ih > 0) else 0.0
    denom = a.area if crowd else a.area + b.area - inter
    return inter / denom if denom > 0 else 0.0


def mask_to_bbox(mask: BinaryMask) -> BBox:
    """Tightest box around the set pixels, each pixel spanning ``[j, j+1] x [i, i+1]``."""
    grid = rle_decode(mask)
    rows = np.flatnonzero(grid.any(axis=1))
    if rows.size == 0:
        raise EmptyMaskError("cannot take the bounding box of an empty mask")
    cols = np.flatnonzero(grid.any(axis=0))
    return BBox(float(cols[0]), float(rows[0]), float(cols[-1] + 1), float(rows[-1] + 1))
