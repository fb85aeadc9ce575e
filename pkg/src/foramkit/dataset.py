"""Dataset manifests, prediction files and per-phase statistics.

A manifest is a UTF-8 JSON document::

    {
      "schema_version": 1,
      "name": "...", "version": "...",
      "images": [
        {"image_id": 7, "file_name": "plate_007.png", "width": 512, "height": 512,
         "phase": 3,
         "annotations": [
           {"object_id": 1, "class": "planktic", "iscrowd": false,
            "polygon": [[x, y], ...]},
           {"object_id": 2, "class": "sediment",
            "rle": {"size": [height, width], "counts": "<COCO RLE string>"}}
         ]}
      ]
    }

A prediction file is a JSON list of
``{"image_id", "class", "score", "segmentation": {"size", "counts"}, "bbox"?}``
where ``bbox`` is ``[x, y, width, height]`` as in COCO result files.
"""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import jsonschema
import numpy as np

from .exceptions import DuplicateIdError, ManifestError, MalformedMaskError, UnknownImageError
from .geometry import BBox, BinaryMask, mask_to_bbox, rasterize_polygon

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1


class ClassLabel(enum.IntEnum):
    """The four object classes. Integer ids are fixed and part of the file format."""

    AGGLUTINATED = 1
    BENTHIC = 2
    PLANKTIC = 3
    SEDIMENT = 4

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, value) -> "ClassLabel":
        if isinstance(value, ClassLabel):
            return value
        if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
            return cls(int(value))
        key = str(value).strip().lower().replace(" ", "_").replace("-", "_")
        key = _CLASS_ALIASES.get(key, key)
        try:
            return cls[key.upper()]
        except KeyError:
            raise ValueError(f"unknown class {value!r}") from None


_CLASS_ALIASES = {
    "agglutinated_benthic": "agglutinated",
    "calcareous": "benthic",
    "calcareous_benthic": "benthic",
    "sediment_grain": "sediment",
}

CLASS_NAMES = tuple(c.label for c in ClassLabel)
UNKNOWN_CLASS = "unknown"

ImageId = Union[int, str]


def id_sort_key(value):
    """Total order over mixed int/str identifiers: ints first, numerically."""
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return (0, int(value), "")
    return (1, 0, str(value))


@dataclass(eq=False)
class AnnotationRecord:
    """A ground-truth object. Exactly one of ``polygon`` / ``rle`` is set."""

    object_id: ImageId
    label: ClassLabel
    polygon: Optional[tuple] = None
    rle: Optional[BinaryMask] = None
    iscrowd: bool = False
    _mask: Optional[BinaryMask] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if (self.polygon is None) == (self.rle is None):
            raise ManifestError("annotation needs exactly one of polygon or rle",
                                object_id=self.object_id)
        if self.polygon is not None:
            self.polygon = tuple((float(x), float(y)) for x, y in self.polygon)
        self.label = ClassLabel.parse(self.label)
        self.iscrowd = bool(self.iscrowd)

    def mask(self, width: int, height: int) -> BinaryMask:
        """Rasterized geometry; polygons are rasterized on first use and cached."""
        if self.rle is not None:
            if (self.rle.width, self.rle.height) != (width, height):
                raise ManifestError(
                    f"mask is {self.rle.width}x{self.rle.height}, image is {width}x{height}",
                    object_id=self.object_id)
            return self.rle
        cached = self._mask
        if cached is None or (cached.width, cached.height) != (width, height):
            cached = rasterize_polygon(self.polygon, width, height)
            self._mask = cached
        return cached

    def to_dict(self) -> dict:
        out = {"object_id": self.object_id, "class": self.label.label, "iscrowd": self.iscrowd}
        if self.polygon is not None:
            out["polygon"] = [[_compact_number(x), _compact_number(y)] for x, y in self.polygon]
        else:
            out["rle"] = self.rle.to_coco()
        return out


@dataclass(eq=False)
class ImageRecord:
    image_id: ImageId
    file_name: str
    width: int
    height: int
    phase: int = 3
    annotations: list = field(default_factory=list)

    def mask(self, ann: AnnotationRecord) -> BinaryMask:
        return ann.mask(self.width, self.height)

    def class_counts(self) -> np.ndarray:
        counts = np.zeros(len(ClassLabel), dtype=np.int64)
        for ann in self.annotations:
            counts[ann.label - 1] += 1
        return counts

    def to_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "file_name": self.file_name,
            "width": self.width,
            "height": self.height,
            "phase": self.phase,
            "annotations": [a.to_dict() for a in self.annotations],
        }


@dataclass(eq=False)
class Manifest:
    images: list = field(default_factory=list)
    name: str = "unnamed"
    version: str = "1"
    root: Optional[Path] = field(default=None, repr=False)

    def __len__(self):
        return len(self.images)

    def __iter__(self):
        return iter(self.images)

    def image(self, image_id) -> ImageRecord:
        for img in self.images:
            if img.image_id == image_id:
                return img
        raise UnknownImageError("image not in manifest", image_id=image_id)

    def image_path(self, img: ImageRecord) -> Path:
        path = Path(img.file_name)
        if not path.is_absolute() and self.root is not None:
            path = self.root / path
        return path

    def subset(self, image_ids: Iterable, name: Optional[str] = None) -> "Manifest":
        keep = set(image_ids)
        return Manifest([img for img in self.images if img.image_id in keep],
                        name=name or self.name, version=self.version, root=self.root)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "version": self.version,
            "images": [img.to_dict() for img in self.images],
        }


def _compact_number(v: float):
    return int(v) if float(v).is_integer() else v


_ID = {"type": ["integer", "string"]}
_RLE = {
    "type": "object",
    "required": ["size", "counts"],
    "properties": {
        "size": {"type": "array", "items": {"type": "integer", "minimum": 1},
                 "minItems": 2, "maxItems": 2},
        "counts": {"anyOf": [{"type": "string"},
                             {"type": "array", "items": {"type": "integer", "minimum": 0}}]},
    },
}

MANIFEST_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "images"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "version": {"type": ["string", "integer"]},
        "images": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["image_id", "width", "height", "annotations"],
                "properties": {
                    "image_id": _ID,
                    "file_name": {"type": "string"},
                    "width": {"type": "integer", "minimum": 1},
                    "height": {"type": "integer", "minimum": 1},
                    "phase": {"enum": [1, 2, 3]},
                    "annotations": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "required": ["object_id", "class"],
                            "properties": {
                                "object_id": _ID,
                                "class": {"type": ["string", "integer"]},
                                "iscrowd": {"type": ["boolean", "integer"]},
                                # Vertex values are checked with numpy; a per-number
                                # schema walk dominates load time on large manifests.
                                "polygon": {"type": "array", "minItems": 3,
                                            "items": {"type": "array", "minItems": 2, "maxItems": 2}},
                                "rle": _RLE,
                            },
                        },
                    },
                },
            },
        },
    },
}

PREDICTION_SCHEMA = {
    "type": "array",
    "items": {
        "type": "object",
        "required": ["image_id", "score", "segmentation"],
        "properties": {
            "image_id": _ID,
            "class": {"type": ["string", "integer", "null"]},
            "score": {"type": "number"},
            "segmentation": _RLE,
            "bbox": {"type": "array", "items": {"type": "number"}, "minItems": 4, "maxItems": 4},
        },
    },
}


_MANIFEST_VALIDATOR = jsonschema.Draft202012Validator(MANIFEST_SCHEMA)
_PREDICTION_VALIDATOR = jsonschema.Draft202012Validator(PREDICTION_SCHEMA)


def _validate(validator, doc, kind):
    err = jsonschema.exceptions.best_match(validator.iter_errors(doc))
    if err is not None:
        raise _schema_error(doc, err, kind)


def _read_json(path):
    path = Path(path)
    try:
        # utf-8-sig tolerates a BOM; json itself ignores CR/LF differences.
        text = path.read_text(encoding="utf-8-sig")
    except FileNotFoundError:
        raise
    except OSError as exc:
        raise ManifestError(f"cannot read {path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: parse error: {exc}") from exc


def _schema_error(doc, err: jsonschema.ValidationError, kind: str) -> ManifestError:
    image_id = object_id = None
    path = list(err.absolute_path)
    try:
        if kind == "manifest" and len(path) >= 2 and path[0] == "images":
            image_id = doc["images"][path[1]].get("image_id")
            if len(path) >= 4 and path[2] == "annotations":
                object_id = doc["images"][path[1]]["annotations"][path[3]].get("object_id")
        elif kind == "predictions" and path:
            image_id = doc[path[0]].get("image_id")
    except (KeyError, IndexError, TypeError, AttributeError):
        pass
    where = "/".join(str(p) for p in path) or "<root>"
    return ManifestError(f"{kind} schema violation at {where}: {err.message}",
                         image_id=image_id, object_id=object_id)


def manifest_from_dict(doc: dict, root=None, check_geometry: bool = True) -> Manifest:
    """Validate a parsed manifest document and build a :class:`Manifest`."""
    _validate(_MANIFEST_VALIDATOR, doc, "manifest")

    images = []
    seen_images = set()
    for raw in doc["images"]:
        image_id = raw["image_id"]
        if image_id in seen_images:
            raise DuplicateIdError(f"duplicate image_id {image_id!r}", image_id=image_id)
        seen_images.add(image_id)
        width, height = raw["width"], raw["height"]
        anns = []
        seen_objects = set()
        for a in raw["annotations"]:
            oid = a["object_id"]
            if oid in seen_objects:
                raise DuplicateIdError(f"duplicate object_id {oid!r}", image_id=image_id, object_id=oid)
            seen_objects.add(oid)
            try:
                label = ClassLabel.parse(a["class"])
            except ValueError as exc:
                raise ManifestError(str(exc), image_id=image_id, object_id=oid) from None
            has_poly, has_rle = "polygon" in a, "rle" in a
            if has_poly == has_rle:
                raise ManifestError("annotation needs exactly one of polygon or rle",
                                    image_id=image_id, object_id=oid)
            rle = None
            if has_poly:
                try:
                    if any(isinstance(v, (bool, str)) for xy in a["polygon"] for v in xy):
                        raise TypeError
                    pts = np.asarray(a["polygon"], dtype=np.float64)
                except (TypeError, ValueError):
                    raise ManifestError("polygon vertices must be numeric [x, y] pairs",
                                        image_id=image_id, object_id=oid) from None
                if not np.isfinite(pts).all():
                    raise ManifestError("polygon has non-finite vertices",
                                        image_id=image_id, object_id=oid)
                if (pts[:, 0].min() < 0 or pts[:, 1].min() < 0
                        or pts[:, 0].max() > width or pts[:, 1].max() > height):
                    raise ManifestError(f"polygon lies outside the {width}x{height} image",
                                        image_id=image_id, object_id=oid)
            else:
                try:
                    rle = BinaryMask.from_coco(a["rle"])
                except MalformedMaskError as exc:
                    raise ManifestError(str(exc), image_id=image_id, object_id=oid) from None
                if (rle.width, rle.height) != (width, height):
                    raise ManifestError(
                        f"mask is {rle.width}x{rle.height}, image is {width}x{height}",
                        image_id=image_id, object_id=oid)
            ann = AnnotationRecord(oid, label, polygon=a.get("polygon"), rle=rle,
                                   iscrowd=bool(a.get("iscrowd", False)))
            if check_geometry and ann.mask(width, height).area == 0:
                raise ManifestError("annotation geometry is empty after rasterization",
                                    image_id=image_id, object_id=oid)
            anns.append(ann)
        images.append(ImageRecord(image_id, raw.get("file_name", f"{image_id}.png"),
                                  width, height, raw.get("phase", 3), anns))
    return Manifest(images, name=doc.get("name", "unnamed"), version=str(doc.get("version", "1")),
                    root=Path(root) if root is not None else None)


def load_manifest(path, check_geometry: bool = True) -> Manifest:
    """Load and fully validate a manifest file.

    Raises :class:`ManifestError` (or a subclass) naming the offending image
    and object on any parse, schema, bounds or duplicate-id problem.
    """
    path = Path(path)
    doc = _read_json(path)
    return manifest_from_dict(doc, root=path.parent, check_geometry=check_geometry)


def dump_manifest(manifest: Manifest) -> str:
    """Serialize deterministically: a header line, then one image per line."""
    doc = manifest.to_dict()
    images = doc.pop("images")
    head = json.dumps(doc, ensure_ascii=False)[:-1]
    lines = [head + ', "images": [']
    for i, img in enumerate(images):
        sep = "," if i < len(images) - 1 else ""
        lines.append(json.dumps(img, ensure_ascii=False, separators=(",", ":")) + sep)
    lines.append("]}")
    return "\n".join(lines) + "\n"


def save_manifest(manifest: Manifest, path) -> Path:
    path = Path(path)
    path.write_text(dump_manifest(manifest), encoding="utf-8", newline="\n")
    return path


def check_phase_purity(manifest: Manifest) -> list:
    """Image ids of phase 1/2 images that mix classes (those phases are single-class)."""
    bad = []
    for img in manifest:
        if img.phase in (1, 2) and len({a.label for a in img.annotations}) > 1:
            bad.append(img.image_id)
    return bad


@dataclass(frozen=True)
class StatsRow:
    images: int
    objects: int
    per_class: tuple

    def __add__(self, other: "StatsRow") -> "StatsRow":
        return StatsRow(self.images + other.images, self.objects + other.objects,
                        tuple(a + b for a, b in zip(self.per_class, other.per_class)))

    def as_dict(self) -> dict:
        out = {"images": self.images, "objects": self.objects}
        out.update({name: n for name, n in zip(CLASS_NAMES, self.per_class)})
        return out


_ZERO_ROW = StatsRow(0, 0, (0,) * len(ClassLabel))
PHASE_NAMES = {1: "First", 2: "Second", 3: "Third"}


@dataclass(frozen=True)
class DatasetStats:
    phases: dict
    combined: StatsRow

    def as_dict(self) -> dict:
        out = {PHASE_NAMES.get(p, str(p)): row.as_dict() for p, row in self.phases.items()}
        out["Combined"] = self.combined.as_dict()
        return out

    def to_table(self) -> str:
        header = ["Phase", "Images", "Objects"] + [n.capitalize() for n in CLASS_NAMES]
        rows = [[PHASE_NAMES.get(p, str(p)), r.images, r.objects, *r.per_class]
                for p, r in self.phases.items()]
        c = self.combined
        rows.append(["Combined", c.images, c.objects, *c.per_class])
        cells = [header] + [[str(v) for v in row] for row in rows]
        widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
        fmt = lambda r: "  ".join(v.ljust(w) if i == 0 else v.rjust(w)
                                  for i, (v, w) in enumerate(zip(r, widths)))
        lines = [fmt(cells[0]), "-" * len(fmt(cells[0]))]
        lines += [fmt(r) for r in cells[1:-1]]
        lines += ["-" * len(fmt(cells[0])), fmt(cells[-1])]
        return "\n".join(lines)


def dataset_stats(manifest: Manifest) -> DatasetStats:
    """Images, objects and objects-per-class, per acquisition phase and combined."""
    phases = {p: _ZERO_ROW for p in PHASE_NAMES}
    for img in manifest:
        row = StatsRow(1, len(img.annotations), tuple(int(v) for v in img.class_counts()))
        phases[img.phase] = phases.get(img.phase, _ZERO_ROW) + row
    combined = _ZERO_ROW
    for row in phases.values():
        combined = combined + row
    return DatasetStats(dict(sorted(phases.items())), combined)


@dataclass(eq=False)
class Detection:
    """A scored model output. ``label`` is None for class-agnostic detectors."""

    image_id: ImageId
    label: Optional[ClassLabel]
    score: float
    mask: BinaryMask
    bbox: Optional[BBox] = None

    def __post_init__(self):
        if self.label is not None and not (isinstance(self.label, str) and self.label == UNKNOWN_CLASS):
            self.label = ClassLabel.parse(self.label)
        else:
            self.label = None
        self.score = float(self.score)
        if self.bbox is None and self.mask.area > 0:
            self.bbox = mask_to_bbox(self.mask)

    @property
    def class_name(self) -> str:
        return self.label.label if self.label is not None else UNKNOWN_CLASS

    def to_dict(self) -> dict:
        out = {"image_id": self.image_id, "class": self.class_name, "score": self.score,
               "segmentation": self.mask.to_coco()}
        if self.bbox is not None:
            out["bbox"] = [_compact_number(v) for v in self.bbox.to_xywh()]
        return out


def sort_detections(dets: Sequence[Detection]) -> list:
    """Order by (image_id, descending score); equal scores keep input order."""
    return sorted(dets, key=lambda d: (id_sort_key(d.image_id), -d.score))


def predictions_from_list(records: list, manifest: Manifest, check_bbox: bool = True) -> list:
    _validate(_PREDICTION_VALIDATOR, records, "predictions")
    by_id = {img.image_id: img for img in manifest}
    dets = []
    for k, rec in enumerate(records):
        image_id = rec["image_id"]
        img = by_id.get(image_id)
        if img is None:
            raise UnknownImageError(f"prediction #{k} references an image not in the manifest",
                                    image_id=image_id)
        score = float(rec["score"])
        if not 0.0 <= score <= 1.0:
            raise ManifestError(f"prediction #{k} score {score} outside [0, 1]", image_id=image_id)
        try:
            mask = BinaryMask.from_coco(rec["segmentation"])
        except MalformedMaskError as exc:
            raise ManifestError(f"prediction #{k}: {exc}", image_id=image_id) from None
        if (mask.width, mask.height) != (img.width, img.height):
            raise ManifestError(
                f"prediction #{k} mask is {mask.width}x{mask.height}, "
                f"image is {img.width}x{img.height}", image_id=image_id)
        cls = rec.get("class")
        try:
            label = None if cls in (None, UNKNOWN_CLASS) else ClassLabel.parse(cls)
        except ValueError as exc:
            raise ManifestError(f"prediction #{k}: {exc}", image_id=image_id) from None
        bbox = None
        if "bbox" in rec:
            try:
                bbox = BBox.from_xywh(rec["bbox"])
            except ValueError as exc:
                raise ManifestError(f"prediction #{k}: {exc}", image_id=image_id) from None
            if check_bbox and mask.area > 0:
                ref = mask_to_bbox(mask)
                off = max(abs(a - b) for a, b in zip(
                    (bbox.x_min, bbox.y_min, bbox.x_max, bbox.y_max),
                    (ref.x_min, ref.y_min, ref.x_max, ref.y_max)))
                if off > 1.0:
                    raise ManifestError(
                        f"prediction #{k} bbox deviates {off:.2f}px from its mask", image_id=image_id)
        dets.append(Detection(image_id, label, score, mask, bbox))
    return sort_detections(dets)


def load_predictions(path, manifest: Manifest, check_bbox: bool = True) -> list:
    """Load a prediction file, validated against ``manifest``.

    Returns detections sorted by ``(image_id, -score)``.
    """
    doc = _read_json(path)
    if isinstance(doc, dict) and "predictions" in doc:
        doc = doc["predictions"]
    return predictions_from_list(doc, manifest, check_bbox=check_bbox)


def save_predictions(dets: Iterable[Detection], path) -> Path:
    path = Path(path)
    lines = [json.dumps(d.to_dict(), separators=(",", ":")) for d in dets]
    body = "[\n" + ",\n".join(lines) + "\n]\n" if lines else "[]\n"
    path.write_text(body, encoding="utf-8", newline="\n")
    return path


def ground_truth_as_predictions(manifest: Manifest) -> list:
    """Every annotation as a score-1 detection; useful for self-evaluation."""
    dets = []
    for img in manifest:
        for ann in img.annotations:
            mask = ann.mask(img.width, img.height)
            dets.append(Detection(img.image_id, ann.label, 1.0, mask, mask_to_bbox(mask)))
    return dets
