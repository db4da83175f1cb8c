"""Plain-text, CSV and SVG renderings of evaluation results."""

from __future__ import annotations

import csv
import io
from typing import Mapping, Sequence
from xml.sax.saxutils import escape

import numpy as np

from .metrics import ConfusionMatrix, MetricsReport
from .stats import ComparisonResult

CELL = 36
MARGIN = 130

METRIC_COLUMNS = ["overall_accuracy", "macro_accuracy", "weighted_accuracy", "weighted_precision",
                  "weighted_recall", "weighted_f1", "iba", "top3", "top5", "n_samples"]


def shade(value: float) -> str:
    """White (0) to dark blue (1)."""
    v = min(max(float(value), 0.0), 1.0)
    r = round(255 - v * (255 - 8))
    g = round(255 - v * (255 - 48))
    b = round(255 - v * (255 - 107))
    return f"#{r:02x}{g:02x}{b:02x}"


def confusion_svg(cm: ConfusionMatrix, title: str = "", header: str | None = None) -> str:
    """Row-normalized heatmap; each cell carries its value in ``data-value``."""
    norm = cm.row_normalized()
    C = len(cm.classes)
    width = MARGIN + C * CELL + 20
    height = MARGIN + C * CELL + 40
    out = ['<?xml version="1.0" encoding="UTF-8"?>']
    if header:
        out.append(f"<!-- {escape(header)} -->")
    out.append(f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
               f'font-family="sans-serif" font-size="10">')
    out.append(f'<text x="{width / 2:.1f}" y="16" text-anchor="middle" font-size="13">{escape(title)}</text>')
    for i, name in enumerate(cm.classes):
        y = MARGIN + i * CELL + CELL / 2
        out.append(f'<text x="{MARGIN - 6}" y="{y + 3:.1f}" text-anchor="end">{escape(name)}</text>')
        x = MARGIN + i * CELL + CELL / 2
        out.append(f'<text x="{x:.1f}" y="{MARGIN - 6}" text-anchor="start" '
                   f'transform="rotate(-45 {x:.1f} {MARGIN - 6})">{escape(name)}</text>')
    for i in range(C):
        for j in range(C):
            v = float(norm[i, j])
            x, y = MARGIN + j * CELL, MARGIN + i * CELL
            out.append(f'<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="{shade(v)}" '
                       f'stroke="#cccccc" data-row="{i}" data-col="{j}" data-value="{v:.6f}"/>')
            colour = "#ffffff" if v > 0.5 else "#000000"
            out.append(f'<text x="{x + CELL / 2:.1f}" y="{y + CELL / 2 + 3:.1f}" text-anchor="middle" '
                       f'fill="{colour}">{v:.2f}</text>')
    out.append(f'<text x="{MARGIN + C * CELL / 2:.1f}" y="{height - 10}" text-anchor="middle">predicted</text>')
    out.append(f'<text x="12" y="{MARGIN + C * CELL / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 12 {MARGIN + C * CELL / 2:.1f})">true</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def metrics_table_csv(reports: Mapping[str, MetricsReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model"] + METRIC_COLUMNS)
    for name in sorted(reports):
        d = reports[name].to_dict()
        w.writerow([name] + ["" if d[c] is None else (f"{d[c]:.6f}" if isinstance(d[c], float) else d[c])
                             for c in METRIC_COLUMNS])
    return buf.getvalue()


def metrics_table_text(reports: Mapping[str, MetricsReport]) -> str:
    names = sorted(reports)
    width = max([len(n) for n in names] + [5])
    cols = ["overall", "macro", "w-prec", "w-rec", "w-F1", "IBA", "top3", "top5"]
    lines = [f"{'model':<{width}s} " + " ".join(f"{c:>7s}" for c in cols)]
    for n in names:
        r = reports[n]
        vals = [r.overall_accuracy, r.macro_accuracy, r.weighted_precision, r.weighted_recall,
                r.weighted_f1, r.iba, r.top3, r.top5]
        lines.append(f"{n:<{width}s} " + " ".join("      -" if v is None else f"{v:7.4f}" for v in vals))
    return "\n".join(lines) + "\n"


def comparison_summary(results: Sequence[ComparisonResult]) -> str:
    if not results:
        return "no model pairs compared\n"
    return "\n".join(r.summary() for r in results) + "\n"


def parse_confusion_csv(text: str) -> tuple[list[str], np.ndarray]:
    """Inverse of :meth:`ConfusionMatrix.to_csv`; lines starting with '#' are skipped."""
    rows = [r for r in csv.reader(line for line in text.splitlines() if line and not line.startswith("#"))]
    classes = rows[0][1:]
    counts = np.array([[int(v) for v in r[1:]] for r in rows[1:]], dtype=np.int64)
    return classes, counts
