"""COCO-protocol evaluation of instance detections and segmentations.

Matching follows COCO: within an image and class, detections are visited in
descending score and each takes the unmatched non-crowd ground truth with the
highest IoU at or above the threshold, ties going to the lowest object id.
A detection that finds none but overlaps a crowd region (by the
detection-normalized crowd IoU) is ignored instead of counted as a false
positive. Precision is interpolated onto a fixed recall grid by taking the
maximum precision at any recall at or beyond each grid point.

Unlike pycocotools there is no area partition, and classes without ground
truth are left out of the means.
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .dataset import CLASS_NAMES, AnnotationRecord, ClassLabel, Detection, Manifest, id_sort_key
from .exceptions import ConfigError, UnknownImageError
from .geometry import BBox, BinaryMask, mask_to_bbox, rle_decode

logger = logging.getLogger(__name__)

DEFAULT_IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
MAX_DETECTIONS = 256
MAX_DETECTIONS_TRAINING = 100
AGNOSTIC = "all"

TP, FP, IGNORED = "tp", "fp", "ignored"


@dataclass(frozen=True)
class EvalConfig:
    """Evaluation protocol.

    ``max_detections`` caps detections per image and class, as in COCO.
    ``ar_caps`` lists extra caps at which AR is also reported.
    ``class_agnostic`` pools all classes into one, for detectors that emit no
    class (``included_classes`` still filters the ground truth).
    """

    iou_thresholds: tuple = DEFAULT_IOU_THRESHOLDS
    max_detections: int = MAX_DETECTIONS
    task: str = "mask"
    included_classes: tuple = CLASS_NAMES
    recall_points: int = 101
    class_agnostic: bool = False
    ar_caps: tuple = (MAX_DETECTIONS_TRAINING, MAX_DETECTIONS)

    def __post_init__(self):
        ts = tuple(float(t) for t in self.iou_thresholds)
        if not ts:
            raise ConfigError("iou_thresholds must not be empty")
        if any(not 0.0 < t <= 1.0 for t in ts):
            raise ConfigError(f"IoU thresholds must lie in (0, 1], got {ts}")
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ConfigError(f"IoU thresholds must be strictly increasing, got {ts}")
        object.__setattr__(self, "iou_thresholds", ts)
        if int(self.max_detections) != self.max_detections or self.max_detections < 1:
            raise ConfigError(f"max_detections must be an integer >= 1, got {self.max_detections}")
        object.__setattr__(self, "max_detections", int(self.max_detections))
        if self.task not in ("bbox", "mask"):
            raise ConfigError(f"task must be 'bbox' or 'mask', got {self.task!r}")
        try:
            labels = sorted({ClassLabel.parse(c) for c in self.included_classes})
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if not labels:
            raise ConfigError("included_classes must name at least one class")
        object.__setattr__(self, "included_classes", tuple(c.label for c in labels))
        if int(self.recall_points) != self.recall_points or self.recall_points < 2:
            raise ConfigError("recall_points must be an integer >= 2")
        caps = tuple(sorted({int(c) for c in self.ar_caps}))
        if any(c < 1 for c in caps):
            raise ConfigError("ar_caps must be >= 1")
        object.__setattr__(self, "ar_caps", caps)

    @property
    def labels(self) -> tuple:
        return tuple(ClassLabel.parse(c) for c in self.included_classes)

    def recall_grid(self) -> np.ndarray:
        return np.arange(self.recall_points) / (self.recall_points - 1)

    def threshold_index(self, t: float) -> Optional[int]:
        for i, v in enumerate(self.iou_thresholds):
            if math.isclose(v, t, abs_tol=1e-9):
                return i
        return None

    def to_dict(self) -> dict:
        return asdict(self)


# Matching ------------------------------------------------------------------

def _gt_geometry(ann: AnnotationRecord, width: int, height: int, task: str):
    mask = ann.mask(width, height)
    return mask if task == "mask" else mask_to_bbox(mask)


def _det_geometry(det: Detection, task: str):
    if task == "mask":
        return det.mask
    return det.bbox if det.bbox is not None else mask_to_bbox(det.mask)


def iou_matrix(det_geoms: Sequence, gt_geoms: Sequence, crowd: Sequence[bool]) -> np.ndarray:
    """``(n_det, n_gt)`` IoUs; crowd columns use ``|d & g| / |d|``."""
    crowd = np.asarray(crowd, dtype=bool)
    nd, ng = len(det_geoms), len(gt_geoms)
    if nd == 0 or ng == 0:
        return np.zeros((nd, ng))
    if isinstance(det_geoms[0], BinaryMask):
        shape = (det_geoms[0].width, det_geoms[0].height)
        for m in list(det_geoms) + list(gt_geoms):
            if (m.width, m.height) != shape:
                raise ValueError(f"mask dimensions differ: {m.width}x{m.height} vs "
                                 f"{shape[0]}x{shape[1]}")
        d = np.stack([rle_decode(m).ravel() for m in det_geoms]).astype(np.float64)
        g = np.stack([rle_decode(m).ravel() for m in gt_geoms]).astype(np.float64)
        # float64 sums of 0/1 values are exact far beyond any image size.
        inter = d @ g.T
        d_area = np.array([m.area for m in det_geoms], dtype=np.float64)[:, None]
        g_area = np.array([m.area for m in gt_geoms], dtype=np.float64)[None, :]
    else:
        db = np.array([[b.x_min, b.y_min, b.x_max, b.y_max] for b in det_geoms])[:, None, :]
        gb = np.array([[b.x_min, b.y_min, b.x_max, b.y_max] for b in gt_geoms])[None, :, :]
        iw = np.minimum(db[..., 2], gb[..., 2]) - np.maximum(db[..., 0], gb[..., 0])
        ih = np.minimum(db[..., 3], gb[..., 3]) - np.maximum(db[..., 1], gb[..., 1])
        inter = np.where((iw > 0) & (ih > 0), iw * ih, 0.0)
        d_area = (db[..., 2] - db[..., 0]) * (db[..., 3] - db[..., 1])
        g_area = (gb[..., 2] - gb[..., 0]) * (gb[..., 3] - gb[..., 1])
    denom = np.where(crowd[None, :], d_area, d_area + g_area - inter)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(denom > 0, inter / np.where(denom > 0, denom, 1.0), 0.0)


def match_ious(ious: np.ndarray, crowd: Sequence[bool], thresholds: Sequence[float]):
    """Greedy matching for detections already in score order.

    Returns ``(tags, matched)``, each ``(n_thresholds, n_det)``: tags are
    TP/FP/IGNORED and ``matched`` holds the ground-truth column (or -1).
    """
    crowd = np.asarray(crowd, dtype=bool)
    nd, ng = ious.shape
    tags = np.full((len(thresholds), nd), FP, dtype=object)
    matched = np.full((len(thresholds), nd), -1, dtype=np.int64)
    for ti, t in enumerate(thresholds):
        taken = np.zeros(ng, dtype=bool)
        for d in range(nd):
            row = ious[d]
            ok = row >= t
            cand = ok & ~crowd & ~taken
            if cand.any():
                g = int(np.argmax(np.where(cand, row, -1.0)))
                taken[g] = True
                tags[ti, d] = TP
                matched[ti, d] = g
                continue
            cand = ok & crowd
            if cand.any():
                tags[ti, d] = IGNORED
                matched[ti, d] = int(np.argmax(np.where(cand, row, -1.0)))
    return tags, matched


class MatchResult(NamedTuple):
    """Matching of one image and class at one IoU threshold."""

    scores: list
    tags: list
    matched_gt: list
    n_gt: int
    n_crowd: int


def _order_gts(gts):
    return sorted(gts, key=lambda a: id_sort_key(a.object_id))


def _order_dets(dets):
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    return [dets[i] for i in order]


def match(gts: Sequence[AnnotationRecord], dets: Sequence[Detection], iou_t: float,
          task: str = "mask", cap: int = MAX_DETECTIONS, width: Optional[int] = None,
          height: Optional[int] = None) -> MatchResult:
    """Match detections of one image and class against its ground truth.

    ``width`` and ``height`` rasterize polygon annotations; they default to
    the detections' mask size.
    """
    if width is None or height is None:
        ref = dets[0].mask if dets else next((a.rle for a in gts if a.rle is not None), None)
        if ref is None:
            raise ValueError("width/height are required to rasterize polygon ground truth")
        width, height = ref.width, ref.height
    for d in dets:
        if (d.mask.width, d.mask.height) != (width, height):
            raise ValueError(f"detection mask is {d.mask.width}x{d.mask.height}, "
                             f"ground truth image is {width}x{height}")
    gts = _order_gts(gts)
    dets = _order_dets(dets)[:cap]
    crowd = [a.iscrowd for a in gts]
    ious = iou_matrix([_det_geometry(d, task) for d in dets],
                      [_gt_geometry(a, width, height, task) for a in gts], crowd)
    tags, matched = match_ious(ious, crowd, [iou_t])
    return MatchResult(
        scores=[d.score for d in dets],
        tags=list(tags[0]),
        matched_gt=[gts[g].object_id if g >= 0 else None for g in matched[0]],
        n_gt=sum(not c for c in crowd),
        n_crowd=sum(crowd),
    )


# Precision/recall ------------------------------------------------------------

@dataclass
class PRCurve:
    recall_grid: np.ndarray
    precision: np.ndarray
    raw_recall: np.ndarray
    raw_precision: np.ndarray
    scores: np.ndarray

    @property
    def ap(self) -> float:
        return float(np.mean(self.precision))

    @property
    def max_recall(self) -> float:
        return float(self.raw_recall[-1]) if self.raw_recall.size else 0.0

    def to_dict(self) -> dict:
        return {
            "recall_grid": self.recall_grid.tolist(),
            "precision": self.precision.tolist(),
            "raw_recall": self.raw_recall.tolist(),
            "raw_precision": self.raw_precision.tolist(),
            "scores": self.scores.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PRCurve":
        return cls(*(np.asarray(d[k], dtype=np.float64) for k in
                     ("recall_grid", "precision", "raw_recall", "raw_precision", "scores")))


def pr_curve(is_tp: Sequence[bool], n_gt: int, recall_points: int = 101,
             scores: Optional[Sequence[float]] = None) -> PRCurve:
    """Interpolated precision-recall curve for score-ordered, non-ignored detections."""
    if n_gt <= 0:
        raise ValueError("precision-recall is undefined without ground truth")
    is_tp = np.asarray(is_tp, dtype=bool)
    tp = np.cumsum(is_tp, dtype=np.float64)
    fp = np.cumsum(~is_tp, dtype=np.float64)
    recall = tp / n_gt
    precision = tp / np.maximum(tp + fp, np.finfo(np.float64).tiny)
    envelope = np.maximum.accumulate(precision[::-1])[::-1] if precision.size else precision
    grid = np.arange(recall_points) / (recall_points - 1)
    idx = np.searchsorted(recall, grid, side="left")
    interp = np.zeros(recall_points)
    hit = idx < recall.size
    interp[hit] = envelope[idx[hit]]
    s = np.asarray(scores, dtype=np.float64) if scores is not None else np.zeros(0)
    return PRCurve(grid, interp, recall, precision, s)


# Reports ---------------------------------------------------------------------

def _round_key(t: float) -> str:
    return f"{t:.2f}"


@dataclass
class MetricsReport:
    """Summary metrics plus per-class, per-threshold and curve breakdowns.

    ``ap50`` / ``ap75`` are None when the configuration lacks those thresholds.
    """

    ap: float
    ap50: Optional[float]
    ap75: Optional[float]
    ar: float
    ar_at: dict
    per_threshold: dict
    per_class: dict
    curves: dict
    mean_curves: dict
    config: EvalConfig
    skipped_classes: list = field(default_factory=list)
    counts: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {"AP": self.ap, "AP50": self.ap50, "AP75": self.ap75, "AR": self.ar}

    def scalars(self) -> dict:
        """Every scalar in the report, flattened with dotted keys."""
        out = {f"summary.{k}": v for k, v in self.summary().items()}
        out.update({f"ar_at.{k}": v for k, v in self.ar_at.items()})
        for t, row in self.per_threshold.items():
            out.update({f"per_threshold.{t}.{k}": v for k, v in row.items()})
        for c, row in self.per_class.items():
            for k, v in row.items():
                if isinstance(v, dict):
                    out.update({f"per_class.{c}.{k}.{t}": x for t, x in v.items()})
                else:
                    out[f"per_class.{c}.{k}"] = v
        return out

    def to_dict(self) -> dict:
        return {
            "summary": self.summary(),
            "ar_at": {str(k): v for k, v in self.ar_at.items()},
            "per_threshold": self.per_threshold,
            "per_class": self.per_class,
            "skipped_classes": list(self.skipped_classes),
            "counts": dict(self.counts),
            "config": self.config.to_dict(),
            "curves": [{"class": c, "iou": t, **curve.to_dict()}
                       for (c, t), curve in self.curves.items()],
            "mean_curves": {t: np.asarray(p).tolist() for t, p in self.mean_curves.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        cfg = d["config"]
        cfg = EvalConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in cfg.items()})
        s = d["summary"]
        return cls(
            ap=s["AP"], ap50=s["AP50"], ap75=s["AP75"], ar=s["AR"],
            ar_at={int(k): v for k, v in d["ar_at"].items()},
            per_threshold=d["per_threshold"], per_class=d["per_class"],
            curves={(c["class"], c["iou"]): PRCurve.from_dict(c) for c in d["curves"]},
            mean_curves={t: np.asarray(p) for t, p in d["mean_curves"].items()},
            config=cfg, skipped_classes=list(d.get("skipped_classes", [])),
            counts=dict(d.get("counts", {})),
        )


class _Pool:
    """Detections and ground-truth count accumulated for one category."""

    def __init__(self, n_thresholds):
        self.n_gt = 0
        self.scores = []
        self.order = []
        self.rank = []
        self.tags = [[] for _ in range(n_thresholds)]


def _category_of(label, cfg: EvalConfig):
    if cfg.class_agnostic:
        return AGNOSTIC
    return label.label if label is not None else None


def evaluate(manifest: Manifest, detections: Sequence[Detection],
             cfg: EvalConfig = EvalConfig()) -> MetricsReport:
    """Evaluate ``detections`` against the manifest's annotations."""
    by_image = {img.image_id: img for img in manifest}
    included = set(cfg.labels)
    categories = [AGNOSTIC] if cfg.class_agnostic else [c.label for c in cfg.labels]
    thresholds = cfg.iou_thresholds
    cap = max(cfg.max_detections, *cfg.ar_caps)

    dets_by_key = defaultdict(list)
    dropped = 0
    for order, det in enumerate(detections):
        if det.image_id not in by_image:
            raise UnknownImageError("detection references an image not in the manifest",
                                    image_id=det.image_id)
        if not cfg.class_agnostic and det.label not in included:
            dropped += 1
            continue
        dets_by_key[(det.image_id, _category_of(det.label, cfg))].append((order, det))
    if dropped:
        logger.info("ignored %d detections outside the included classes", dropped)

    pools = {c: _Pool(len(thresholds)) for c in categories}
    n_gt_total = 0
    for img in manifest:
        gts_by_cat = defaultdict(list)
        for ann in img.annotations:
            if ann.label in included:
                gts_by_cat[_category_of(ann.label, cfg)].append(ann)
        for cat in categories:
            gts = _order_gts(gts_by_cat.get(cat, []))
            entries = dets_by_key.get((img.image_id, cat), [])
            entries = sorted(entries, key=lambda e: (-e[1].score, e[0]))[:cap]
            for _, det in entries:
                if (det.mask.width, det.mask.height) != (img.width, img.height):
                    raise ValueError(
                        f"image {img.image_id!r}: detection mask is {det.mask.width}x"
                        f"{det.mask.height}, image is {img.width}x{img.height}")
            crowd = [a.iscrowd for a in gts]
            pool = pools[cat]
            n_gt = sum(not c for c in crowd)
            pool.n_gt += n_gt
            n_gt_total += n_gt
            if not entries:
                continue
            ious = iou_matrix([_det_geometry(d, cfg.task) for _, d in entries],
                              [_gt_geometry(a, img.width, img.height, cfg.task) for a in gts],
                              crowd)
            tags, _ = match_ious(ious, crowd, thresholds)
            for rank, (order, det) in enumerate(entries):
                pool.scores.append(det.score)
                pool.order.append(order)
                pool.rank.append(rank)
            for ti in range(len(thresholds)):
                pool.tags[ti].extend(tags[ti].tolist())

    if n_gt_total == 0:
        raise ValueError("no (non-crowd) ground truth in the evaluated classes")

    valid = [c for c in categories if pools[c].n_gt > 0]
    skipped = [c for c in categories if pools[c].n_gt == 0]
    for c in skipped:
        logger.warning("class %r has no ground truth; excluded from the means", c)

    ap = {}
    ar = {}
    curves = {}
    for c in valid:
        pool = pools[c]
        scores = np.asarray(pool.scores, dtype=np.float64)
        order = np.asarray(pool.order, dtype=np.int64)
        rank = np.asarray(pool.rank, dtype=np.int64)
        sort = np.lexsort((order, -scores)) if scores.size else np.zeros(0, dtype=np.int64)
        for ti, t in enumerate(thresholds):
            tags = np.asarray(pool.tags[ti], dtype=object)[sort] if sort.size else np.zeros(0, dtype=object)
            r = rank[sort]
            s = scores[sort]
            for k in sorted({cfg.max_detections, *cfg.ar_caps}):
                keep = (r < k) & (tags != IGNORED)
                curve = pr_curve(tags[keep] == TP, pool.n_gt, cfg.recall_points, s[keep])
                ar[(c, t, k)] = curve.max_recall
                if k == cfg.max_detections:
                    ap[(c, t)] = curve.ap
                    curves[(c, _round_key(t))] = curve

    mean = lambda xs: float(np.mean(xs))
    ap_t = {t: mean([ap[(c, t)] for c in valid]) for t in thresholds}
    ar_t = {t: mean([ar[(c, t, cfg.max_detections)] for c in valid]) for t in thresholds}
    i50, i75 = cfg.threshold_index(0.5), cfg.threshold_index(0.75)

    per_class = {}
    for c in valid:
        row = {
            "AP": mean([ap[(c, t)] for t in thresholds]),
            "AP50": ap[(c, thresholds[i50])] if i50 is not None else None,
            "AP75": ap[(c, thresholds[i75])] if i75 is not None else None,
            "AR": mean([ar[(c, t, cfg.max_detections)] for t in thresholds]),
            "n_gt": pools[c].n_gt,
            "AP_at": {_round_key(t): ap[(c, t)] for t in thresholds},
        }
        per_class[c] = row

    mean_curves = {
        _round_key(t): np.mean([curves[(c, _round_key(t))].precision for c in valid], axis=0)
        for t in thresholds
    }
    mean_curves["mean"] = np.mean([mean_curves[_round_key(t)] for t in thresholds], axis=0)

    return MetricsReport(
        ap=mean([ap_t[t] for t in thresholds]),
        ap50=ap_t[thresholds[i50]] if i50 is not None else None,
        ap75=ap_t[thresholds[i75]] if i75 is not None else None,
        ar=mean([ar_t[t] for t in thresholds]),
        ar_at={k: mean([ar[(c, t, k)] for c in valid for t in thresholds]) for k in cfg.ar_caps},
        per_threshold={_round_key(t): {"AP": ap_t[t], "AR": ar_t[t]} for t in thresholds},
        per_class=per_class,
        curves=curves,
        mean_curves=mean_curves,
        config=cfg,
        skipped_classes=skipped,
        counts={"images": len(manifest), "ground_truth": n_gt_total,
                "detections": int(sum(len(p.scores) for p in pools.values()))},
    )
