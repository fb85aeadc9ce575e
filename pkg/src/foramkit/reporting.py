"""Export MetricsReports as files.

Formats (``REPORT_FORMAT_VERSION`` versions the field layout):

``summary``
    ``summary.json``: summary, per-threshold, per-class, AR-at-cap and config
    blocks with fixed key order, plus ``summary.csv`` with one row
    ``AP50,AP75,AP,AR``.
``curves``
    ``pr_curves.csv`` with rows ``iou,class,recall,precision`` on the
    interpolation grid. The class ``mean`` holds the class-averaged curve,
    and on that class the iou ``mean`` holds the threshold-averaged curve.
    ``pr_raw.csv`` holds the un-interpolated ``iou,class,rank,score,recall,precision``.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

from .evaluation import MetricsReport

REPORT_FORMAT_VERSION = 1
TABLE_ROWS = ("AP50", "AP75", "AP", "AR")


def _num(v) -> str:
    return "" if v is None else repr(float(v))


def _write(path: Path, text: str) -> Path:
    path.write_text(text, encoding="utf-8", newline="\n")
    return path


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def summary_dict(report: MetricsReport) -> dict:
    return {
        "format_version": REPORT_FORMAT_VERSION,
        "summary": report.summary(),
        "ar_at": {str(k): v for k, v in report.ar_at.items()},
        "per_threshold": report.per_threshold,
        "per_class": report.per_class,
        "skipped_classes": list(report.skipped_classes),
        "counts": dict(report.counts),
        "config": report.config.to_dict(),
    }


def save_report(report: MetricsReport, path) -> Path:
    """Full report, curves included, reloadable with :func:`load_report`."""
    doc = {"format_version": REPORT_FORMAT_VERSION, **report.to_dict()}
    return _write(Path(path), json.dumps(doc, indent=1) + "\n")


def load_report(path) -> MetricsReport:
    return MetricsReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8-sig")))


def curve_rows(report: MetricsReport) -> list:
    rows = []
    for (cls, iou), curve in report.curves.items():
        rows += [[iou, cls, _num(r), _num(p)] for r, p in zip(curve.recall_grid, curve.precision)]
    grid = report.config.recall_grid()
    for iou, prec in report.mean_curves.items():
        rows += [[iou, "mean", _num(r), _num(p)] for r, p in zip(grid, prec)]
    return rows


def export_report(report: MetricsReport, out_dir, fmt: str = "summary") -> list:
    """Write ``fmt`` ('summary', 'curves' or 'all') files into ``out_dir``."""
    if fmt not in ("summary", "curves", "all"):
        raise ValueError(f"unknown report format {fmt!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if fmt in ("summary", "all"):
        written.append(_write(out / "summary.json", json.dumps(summary_dict(report), indent=1) + "\n"))
        s = report.summary()
        written.append(_write(out / "summary.csv",
                              _csv_text(TABLE_ROWS, [[_num(s[k]) for k in TABLE_ROWS]])))
    if fmt in ("curves", "all"):
        written.append(_write(out / "pr_curves.csv",
                              _csv_text(["iou", "class", "recall", "precision"], curve_rows(report))))
        raw = []
        for (cls, iou), curve in report.curves.items():
            for k, (sc, r, p) in enumerate(zip(curve.scores, curve.raw_recall, curve.raw_precision)):
                raw.append([iou, cls, k, _num(sc), _num(r), _num(p)])
        written.append(_write(out / "pr_raw.csv",
                              _csv_text(["iou", "class", "rank", "score", "recall", "precision"], raw)))
    return written


def table2(columns: dict) -> list:
    """Rows AP50/AP75/AP/AR by one column per named report."""
    names = list(columns)
    rows = [["metric", *names]]
    for metric in TABLE_ROWS:
        rows.append([metric, *[_num(columns[n].summary()[metric]) for n in names]])
    return rows


def export_table2(columns: dict, path) -> Path:
    rows = table2(columns)
    return _write(Path(path), _csv_text(rows[0], rows[1:]))
