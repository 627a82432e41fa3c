"""Comparison tables, CSV reports and the accuracy bar chart."""
from __future__ import annotations

import csv
import io
import os
from pathlib import Path
from xml.sax.saxutils import escape

from .metrics import MetricsReport

CSV_HEADER = ["method", "accuracy", "precision", "recall", "f1", "auc_roc", "rmse", "n"]
_ATTR = {'"': "&quot;"}
TABLE_COLUMNS = ["Method", "Accuracy", "Precision", "Recall", "F1-Score", "AUC-ROC", "RMSE"]


def atomic_write(path: str | os.PathLike, data: str | bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    mode = "wb" if isinstance(data, bytes) else "w"
    with open(tmp, mode, **({} if isinstance(data, bytes) else {"encoding": "utf-8", "newline": ""})) as fh:
        fh.write(data)
    os.replace(tmp, path)


def render_report(reports: dict[str, MetricsReport], fmt: str = "table") -> str:
    """Render one row per model in insertion order.

    ``table`` prints accuracy as a percentage with two decimals and the other
    columns with four, followed by a per-class/macro/weighted breakdown.
    ``csv`` writes full-precision floats under ``CSV_HEADER``; precision,
    recall and F1 there are support-weighted.
    """
    if not reports:
        raise ValueError("render_report needs at least one report")
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for name, r in reports.items():
            w.writerow([name, *(repr(float(v)) for v in (r.accuracy, r.precision, r.recall, r.f1,
                                                           r.auc_roc, r.rmse)), int(r.n)])
        return buf.getvalue()
    if fmt != "table":
        raise ValueError(f"unknown report format {fmt!r}")

    rows = [TABLE_COLUMNS]
    for name, r in reports.items():
        rows.append([name, f"{100 * r.accuracy:.2f}%", f"{r.precision:.4f}", f"{r.recall:.4f}",
                     f"{r.f1:.4f}", f"{r.auc_roc:.4f}", f"{r.rmse:.4f}"])
    widths = [max(len(row[i]) for row in rows) for i in range(len(TABLE_COLUMNS))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in rows]
    lines.insert(1, "-" * len(lines[0]))

    lines.append("")
    lines.append("Per-class breakdown (precision / recall / f1 / support)")
    for name, r in reports.items():
        c = r.confusion
        lines.append(f"{name}: confusion TN={c.tn} FP={c.fp} FN={c.fn} TP={c.tp} (n={r.n})")
        for cls in ("uninfected", "parasitized", "macro", "weighted"):
            v = r.per_class[cls]
            lines.append(f"  {cls:<12} {v.precision:.4f}  {v.recall:.4f}  {v.f1:.4f}  {v.support}")
        if r.flags:
            lines.append(f"  degenerate (reported as 0): {', '.join(r.flags)}")
    return "\n".join(lines) + "\n"


def parse_report_csv(text: str) -> dict[str, dict[str, float]]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if header != CSV_HEADER:
        raise ValueError(f"unexpected CSV header {header}")
    out = {}
    for row in reader:
        vals = {k: float(v) for k, v in zip(CSV_HEADER[1:-1], row[1:-1])}
        vals["n"] = int(row[-1])
        out[row[0]] = vals
    return out


def emit_accuracy_chart(accuracies: dict[str, float], path: str | os.PathLike) -> tuple[Path, Path]:
    """Write an SVG bar chart (one bar per model, accuracy on the y axis) plus a CSV sidecar.

    Returns ``(svg_path, csv_path)``; the sidecar sits next to the SVG with a
    ``.csv`` suffix and stores the exact input values.
    """
    if not accuracies:
        raise ValueError("chart needs at least one model")
    svg_path = Path(path)
    csv_path = svg_path.with_suffix(".csv")

    bar_w, gap, left, top, plot_h, bottom = 60, 30, 60, 30, 300, 90
    n = len(accuracies)
    total_w = left + n * (bar_w + gap) + gap
    total_h = top + plot_h + bottom
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{total_w}" height="{total_h}" '
        f'viewBox="0 0 {total_w} {total_h}" font-family="sans-serif" font-size="11">',
        f'<text x="{total_w / 2}" y="18" text-anchor="middle" font-size="14">Accuracy comparison</text>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + plot_h}" stroke="black"/>',
        f'<line x1="{left}" y1="{top + plot_h}" x2="{total_w - gap / 2}" y2="{top + plot_h}" stroke="black"/>',
    ]
    for tick in range(0, 11, 2):
        y = top + plot_h - plot_h * tick / 10
        parts.append(f'<text x="{left - 6}" y="{y + 4}" text-anchor="end">{tick / 10:.1f}</text>')
        parts.append(f'<line x1="{left - 3}" y1="{y}" x2="{left}" y2="{y}" stroke="black"/>')
    parts.append(f'<text x="16" y="{top + plot_h / 2}" transform="rotate(-90 16 {top + plot_h / 2})" '
                 f'text-anchor="middle">Accuracy</text>')
    for i, (name, acc) in enumerate(accuracies.items()):
        h = plot_h * max(0.0, min(1.0, acc))
        x = left + gap + i * (bar_w + gap)
        y = top + plot_h - h
        parts.append(f'<rect class="bar" data-name="{escape(name, _ATTR)}" data-value="{float(acc)!r}" x="{x}" y="{y}" '
                     f'width="{bar_w}" height="{h}" fill="#4c72b0"/>')
        parts.append(f'<text x="{x + bar_w / 2}" y="{y - 4}" text-anchor="middle">{100 * acc:.2f}%</text>')
        parts.append(f'<text x="{x + bar_w / 2}" y="{top + plot_h + 16}" text-anchor="middle">{escape(name)}</text>')
    parts.append("</svg>")
    atomic_write(svg_path, "\n".join(parts) + "\n")

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "accuracy"])
    for name, acc in accuracies.items():
        w.writerow([name, repr(float(acc))])
    atomic_write(csv_path, buf.getvalue())
    return svg_path, csv_path


def read_chart_csv(path: str | os.PathLike) -> dict[str, float]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        if next(reader) != ["method", "accuracy"]:
            raise ValueError("unexpected chart CSV header")
        return {row[0]: float(row[1]) for row in reader}
