"""Command-line entry point: ``foramkit <subcommand> ...``.

Settings resolve as command-line flag > config file > built-in default. The
config file is JSON with optional sections ``pipeline``, ``augment``,
``eval``, ``scene`` and ``split`` (keys named like the dataclass fields) and
a top-level ``seed``. It is given by ``--config`` or the ``FORAMKIT_CONFIG``
environment variable.

Exit codes::

    0  success
    1  unexpected internal error
    2  usage error (unknown flag, bad argument syntax)
    3  missing input file
    4  configuration violation
    5  invalid input data (manifest / prediction validation, placement failure)

Errors are also reported on stderr as a single JSON object
``{"error": <kind>, "exit_code": <n>, "message": <text>}``. Logs go to
stderr; data goes to files or stdout.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path

import numpy as np
from PIL import Image

from .augment import AugmentConfig, AugmentSample, augment
from .dataset import (CLASS_NAMES, AnnotationRecord, ImageRecord, Manifest, dataset_stats,
                      load_manifest, load_predictions, save_manifest, save_predictions)
from .evaluation import DEFAULT_IOU_THRESHOLDS, MAX_DETECTIONS, EvalConfig, evaluate
from .exceptions import ConfigError, ManifestError, PlacementError
from .pipeline import PipelineConfig, detect, read_image
from .reporting import export_report, export_table2, load_report, save_report
from .split import DEFAULT_RATIO, SplitSpec, stratified_split
from .synth import SceneConfig, generate_corpus, to_uint8

logger = logging.getLogger("foramkit")

CONFIG_ENV = "FORAMKIT_CONFIG"

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_MISSING_FILE = 3
EXIT_CONFIG = 4
EXIT_DATA = 5

_PIPE = PipelineConfig()
_AUG = AugmentConfig()
_EVAL = EvalConfig()
_SCENE = SceneConfig()
_SPLIT = SplitSpec()


class CLIError(Exception):
    def __init__(self, kind, code, message):
        super().__init__(message)
        self.kind = kind
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CLIError("usage", EXIT_USAGE, f"{self.prog}: {message}")


def _d(text, default):
    return f"{text} (default: {default})"


def _pair(s):
    try:
        lo, hi = (float(v) for v in s.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LOW,HIGH, got {s!r}") from None
    return (lo, hi)


def _floats(s):
    try:
        return tuple(float(v) for v in s.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {s!r}") from None


def _fmt_pair(p):
    return f"{p[0]},{p[1]}"


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="foramkit", description="Microfossil detection, augmentation and COCO-style evaluation toolkit.")
    p.add_argument("--config", help=_d(f"JSON config file; overrides ${CONFIG_ENV}", "none"))
    p.add_argument("--seed", type=int, help=_d("global random seed", 0))
    p.add_argument("-v", "--verbose", action="count", default=0, help=_d("more logging on stderr", 0))
    sub = p.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")
    sub.required = True

    s = sub.add_parser("stats", help="print the per-phase dataset breakdown")
    s.add_argument("manifest")
    s.add_argument("--json", action="store_true", help=_d("emit JSON instead of a table", False))

    s = sub.add_parser("split", help="class-stratified train/test split")
    s.add_argument("manifest")
    s.add_argument("--out-dir", required=True, help="writes train.manifest and test.manifest here")
    s.add_argument("--ratio", type=float, help=_d("train:test ratio", DEFAULT_RATIO))
    s.add_argument("--tolerance", type=float, help=_d("max per-class share deviation", _SPLIT.tolerance))

    s = sub.add_parser("synth", help="generate a synthetic corpus")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--n-images", type=int, default=None, help=_d("number of scenes", 20))
    s.add_argument("--n-objects", type=int, help=_d("objects per scene", _SCENE.n_objects))
    s.add_argument("--density", type=float, help=_d("objects per 100x100 px; overrides --n-objects", None))
    s.add_argument("--width", type=int, help=_d("scene width", _SCENE.width))
    s.add_argument("--height", type=int, help=_d("scene height", _SCENE.height))
    s.add_argument("--class-mix", type=_floats, help=_d("four proportions", ",".join(map(str, _SCENE.class_mix))))
    s.add_argument("--size-range", type=_pair, help=_d("equivalent diameter range, px", _fmt_pair(_SCENE.size_range)))
    s.add_argument("--overlap", choices=("forbid", "allow"), help=_d("overlap policy", _SCENE.overlap))
    s.add_argument("--max-pair-iou", type=float, help=_d("max pairwise IoU when overlap is allowed", _SCENE.max_pair_iou))
    s.add_argument("--min-gap", type=int, help=_d("clearance in px when overlap is forbidden", _SCENE.min_gap))
    s.add_argument("--phase", type=int, choices=(1, 2, 3), help=_d("acquisition phase recorded", _SCENE.phase))

    s = sub.add_parser("detect", help="run the classical detector over a manifest's images")
    s.add_argument("manifest")
    s.add_argument("--out", required=True, help="prediction file to write")
    s.add_argument("--sigma1", type=float, help=_d("first blur sigma, px", _PIPE.sigma1))
    s.add_argument("--sigma2", type=float, help=_d("second blur sigma, px", _PIPE.sigma2))
    s.add_argument("--threshold", type=float, help=_d("gray level threshold", _PIPE.threshold))
    s.add_argument("--polarity", choices=("light", "dark"), help=_d("object polarity", _PIPE.polarity))
    s.add_argument("--min-area", type=int, help=_d("minimum object area, px", _PIPE.min_area))
    s.add_argument("--connectivity", type=int, choices=(4, 8), help=_d("pixel adjacency", _PIPE.connectivity))
    s.add_argument("--workers", type=int, default=1, help=_d("parallel worker processes", 1))

    s = sub.add_parser("augment", aliases=["augment-preview"], help="write augmented previews")
    s.add_argument("manifest")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--limit", type=int, default=None, help=_d("augment only the first N images", "all"))
    s.add_argument("--p-flip-h", type=float, help=_d("horizontal flip probability", _AUG.p_flip_h))
    s.add_argument("--p-flip-v", type=float, help=_d("vertical flip probability", _AUG.p_flip_v))
    s.add_argument("--brightness", type=_pair, help=_d("brightness factor range", _fmt_pair(_AUG.brightness_range)))
    s.add_argument("--contrast", type=_pair, help=_d("contrast factor range", _fmt_pair(_AUG.contrast_range)))
    s.add_argument("--saturation", type=_pair, help=_d("saturation factor range", _fmt_pair(_AUG.saturation_range)))
    s.add_argument("--hue", type=_pair, help=_d("hue shift range, turns", _fmt_pair(_AUG.hue_range)))
    s.add_argument("--gamma", type=_pair, help=_d("gamma exponent range", _fmt_pair(_AUG.gamma_range)))

    s = sub.add_parser("evaluate", help="evaluate predictions against a manifest")
    s.add_argument("manifest")
    s.add_argument("--pred", required=True, help="prediction file")
    s.add_argument("--out", help=_d("full report JSON to write", "none"))
    s.add_argument("--out-dir", help=_d("directory for --format exports", "none"))
    s.add_argument("--format", choices=("summary", "curves", "all"), default=None,
                   help=_d("export format written to --out-dir", "summary"))
    s.add_argument("--task", choices=("bbox", "mask"), help=_d("evaluation task", _EVAL.task))
    s.add_argument("--iou-thresholds", type=_floats,
                   help=_d("comma-separated IoU thresholds", ",".join(f"{t:.2f}" for t in DEFAULT_IOU_THRESHOLDS)))
    s.add_argument("--max-dets", type=int, help=_d("max detections per image and class", MAX_DETECTIONS))
    s.add_argument("--exclude-class", action="append", choices=CLASS_NAMES,
                   help=_d("drop a class from GT and predictions; repeatable", "none"))
    s.add_argument("--class-agnostic", action="store_true", default=None,
                   help=_d("pool all classes into one", False))

    s = sub.add_parser("report", help="export a saved report, or build a side-by-side metrics CSV")
    s.add_argument("reports", nargs="*", help="saved report JSON (for --format exports)")
    s.add_argument("--column", action="append", default=[], metavar="NAME=REPORT",
                   help=_d("named report column for the AP/AR table; repeatable", "none"))
    s.add_argument("--out", help=_d("AP/AR table CSV to write", "none"))
    s.add_argument("--out-dir", help=_d("export directory", "none"))
    s.add_argument("--format", choices=("summary", "curves", "all"), default="summary",
                   help=_d("export format", "summary"))
    return p


def _load_config(args) -> dict:
    path = args.config or os.environ.get(CONFIG_ENV)
    if not path:
        return {}
    path = Path(path)
    if not path.is_file():
        raise CLIError("missing_file", EXIT_MISSING_FILE, f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8-sig"))
    except json.JSONDecodeError as exc:
        raise CLIError("config", EXIT_CONFIG, f"config file {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise CLIError("config", EXIT_CONFIG, f"config file {path} must hold a JSON object")
    return doc


def _section(config, name, cls, flags: dict):
    """Merge flag values over a config section over dataclass defaults."""
    known = {f.name for f in fields(cls)}
    values = dict(config.get(name, {}))
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown keys in config section {name!r}: {sorted(unknown)}")
    values.update({k: v for k, v in flags.items() if v is not None})
    for k, v in values.items():
        if isinstance(v, list):
            values[k] = tuple(v)
    return cls(**values)


def _require_file(path):
    if not Path(path).is_file():
        raise CLIError("missing_file", EXIT_MISSING_FILE, f"file not found: {path}")


def _seed(args, config):
    if args.seed is not None:
        return args.seed
    return int(config.get("seed", 0))


def cmd_stats(args, config):
    _require_file(args.manifest)
    stats = dataset_stats(load_manifest(args.manifest))
    if args.json:
        print(json.dumps(stats.as_dict(), indent=1))
    else:
        print(stats.to_table())


def cmd_split(args, config):
    _require_file(args.manifest)
    base = dict(config.get("split", {}))
    if "ratio" in base:
        ratio = float(base.pop("ratio"))
        base["train_fraction"] = ratio / (ratio + 1.0)
    if "seed" not in base and "seed" in config:
        base["seed"] = int(config["seed"])
    if args.ratio is not None and args.ratio <= 0:
        raise ConfigError("--ratio must be positive")
    flags = {"seed": args.seed, "tolerance": args.tolerance,
             "train_fraction": args.ratio / (args.ratio + 1.0) if args.ratio is not None else None}
    spec = _section({"split": base}, "split", SplitSpec, flags)
    manifest = load_manifest(args.manifest)
    train, test = stratified_split(manifest, spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for part in (train, test):
        for img in part:
            if manifest.root is not None and not Path(img.file_name).is_absolute():
                img.file_name = os.path.relpath(manifest.root / img.file_name, out)
    save_manifest(train, out / "train.manifest")
    save_manifest(test, out / "test.manifest")
    print(json.dumps({"train": len(train), "test": len(test)}))


def cmd_synth(args, config):
    flags = {"n_objects": args.n_objects, "density": args.density, "width": args.width,
             "height": args.height, "class_mix": args.class_mix, "size_range": args.size_range,
             "overlap": args.overlap, "max_pair_iou": args.max_pair_iou, "min_gap": args.min_gap,
             "phase": args.phase}
    scene = dict(config.get("scene", {}))
    n_images = args.n_images if args.n_images is not None else int(scene.pop("n_images", 20))
    scene.pop("n_images", None)
    template = _section({"scene": scene}, "scene", SceneConfig, flags)
    manifest, _ = generate_corpus(template, n_images, seed=_seed(args, config), out_dir=args.out_dir)
    print(json.dumps({"images": len(manifest),
                      "objects": sum(len(i.annotations) for i in manifest),
                      "manifest": str(Path(args.out_dir) / "manifest.json")}))


def _detect_one(job):
    path, image_id, cfg = job
    return detect(read_image(path), cfg, image_id=image_id)


def cmd_detect(args, config):
    _require_file(args.manifest)
    cfg = _section(config, "pipeline", PipelineConfig,
                   {"sigma1": args.sigma1, "sigma2": args.sigma2, "threshold": args.threshold,
                    "polarity": args.polarity, "min_area": args.min_area,
                    "connectivity": args.connectivity})
    manifest = load_manifest(args.manifest, check_geometry=False)
    jobs = [(manifest.image_path(img), img.image_id, cfg) for img in manifest]
    for path, _, _ in jobs:
        _require_file(path)
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_detect_one, jobs))
    else:
        results = [_detect_one(j) for j in jobs]
    dets = [d for r in results for d in r]
    save_predictions(dets, args.out)
    logger.info("wrote %d detections for %d images to %s", len(dets), len(manifest), args.out)
    print(json.dumps({"images": len(manifest), "detections": len(dets)}))


def cmd_augment(args, config):
    _require_file(args.manifest)
    cfg = _section(config, "augment", AugmentConfig,
                   {"p_flip_h": args.p_flip_h, "p_flip_v": args.p_flip_v,
                    "brightness_range": args.brightness, "contrast_range": args.contrast,
                    "saturation_range": args.saturation, "hue_range": args.hue,
                    "gamma_range": args.gamma})
    seed = _seed(args, config)
    manifest = load_manifest(args.manifest)
    images = manifest.images if args.limit is None else manifest.images[:args.limit]
    for img in images:
        _require_file(manifest.image_path(img))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records, params = [], {}
    for img in images:
        pixels = read_image(manifest.image_path(img))
        if pixels.ndim == 2:
            pixels = np.repeat(pixels[..., None], 3, axis=2)
        sample = AugmentSample.from_record(img, pixels)
        result = augment(sample, cfg, seed)
        name = f"aug_{Path(img.file_name).stem}.png"
        Image.fromarray(to_uint8(result.image)).save(out / name)
        records.append(ImageRecord(img.image_id, name, img.width, img.height, img.phase,
                                   list(result.annotations)))
        params[str(img.image_id)] = result.params
    save_manifest(Manifest(records, name=f"{manifest.name}-augmented", version=manifest.version),
                  out / "manifest.json")
    (out / "params.json").write_text(json.dumps(params, indent=1) + "\n", encoding="utf-8")
    print(json.dumps({"images": len(records), "out_dir": str(out)}))


def cmd_evaluate(args, config):
    _require_file(args.manifest)
    _require_file(args.pred)
    base = dict(config.get("eval", {}))
    excluded = set(args.exclude_class or []) | set(base.pop("exclude_classes", []))
    flags = {"task": args.task, "iou_thresholds": args.iou_thresholds,
             "max_detections": args.max_dets, "class_agnostic": args.class_agnostic}
    if excluded:
        kept = base.get("included_classes", CLASS_NAMES)
        flags["included_classes"] = tuple(c for c in kept if c not in excluded)
    cfg = _section({"eval": base}, "eval", EvalConfig, flags)
    manifest = load_manifest(args.manifest)
    dets = load_predictions(args.pred, manifest)
    report = evaluate(manifest, dets, cfg)
    if args.out:
        save_report(report, args.out)
    if args.out_dir:
        export_report(report, args.out_dir, args.format or "summary")
    print(json.dumps(report.summary()))


def cmd_report(args, config):
    if not args.reports and not args.column:
        raise CLIError("usage", EXIT_USAGE, "report: give report files or --column NAME=REPORT")
    columns = {}
    for spec in args.column:
        name, sep, path = spec.partition("=")
        if not sep or not name:
            raise CLIError("usage", EXIT_USAGE, f"--column expects NAME=REPORT, got {spec!r}")
        _require_file(path)
        columns[name] = load_report(path)
    for path in args.reports:
        _require_file(path)
    if columns:
        if not args.out:
            raise CLIError("usage", EXIT_USAGE, "--column needs --out for the table CSV")
        export_table2(columns, args.out)
    for path in args.reports:
        if not args.out_dir:
            raise CLIError("usage", EXIT_USAGE, "report files need --out-dir")
        export_report(load_report(path), args.out_dir, args.format)
    print(json.dumps({"columns": list(columns), "exported": list(args.reports)}))


COMMANDS = {
    "stats": cmd_stats,
    "split": cmd_split,
    "synth": cmd_synth,
    "detect": cmd_detect,
    "augment": cmd_augment,
    "augment-preview": cmd_augment,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


def _emit_error(kind, code, message):
    sys.stderr.write(json.dumps({"error": kind, "exit_code": code, "message": message}) + "\n")
    return code


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except CLIError as exc:
        return _emit_error(exc.kind, exc.code, str(exc))
    except SystemExit as exc:  # --help
        return int(exc.code or 0)

    logging.basicConfig(level=max(logging.WARNING - 10 * args.verbose, logging.DEBUG),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        config = _load_config(args)
        COMMANDS[args.command](args, config)
    except CLIError as exc:
        return _emit_error(exc.kind, exc.code, str(exc))
    except FileNotFoundError as exc:
        return _emit_error("missing_file", EXIT_MISSING_FILE, str(exc))
    except ConfigError as exc:
        return _emit_error("config", EXIT_CONFIG, str(exc))
    except (ManifestError, PlacementError) as exc:
        return _emit_error("invalid_data", EXIT_DATA, str(exc))
    except (ValueError, TypeError) as exc:
        return _emit_error("invalid_data", EXIT_DATA, str(exc))
    except Exception as exc:  # pragma: no cover
        logger.exception("internal error")
        return _emit_error("internal", EXIT_INTERNAL, repr(exc))
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
