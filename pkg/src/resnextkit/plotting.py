"""Static SVG charts from training metrics CSVs.

Two chart kinds: test error against epoch (one polyline per metric series,
with a dashed vertical marker at every learning-rate drop) and test error
against model size (points sorted by parameter count, connected by a path;
each series contributes exactly one polyline so both chart kinds are
machine-checkable by counting polylines).
"""

import csv
import os

from .train import METRICS_HEADER, MetricsRow

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
           "#8c564b", "#17becf", "#7f7f7f")
WIDTH = 640
HEIGHT = 420
PAD = 56


class PlotError(ValueError):
    """Raised for empty/invalid metric series."""


def read_metrics(path: str) -> list[MetricsRow]:
    """Load one metrics CSV, enforcing the shared schema."""
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise PlotError(f"{path}: empty metrics file") from None
        if header != METRICS_HEADER.split(","):
            raise PlotError(f"{path}: header {header} does not match {METRICS_HEADER!r}")
        rows = [MetricsRow(int(r[0]), *map(float, r[1:])) for r in reader if r]
    if not rows:
        raise PlotError(f"{path}: no metric rows")
    return rows


def series_label(path: str) -> str:
    return os.path.splitext(os.path.basename(path))[0]


def _scales(x_max, y_max):
    x_scale = (WIDTH - 2 * PAD) / max(x_max, 1e-9)
    y_scale = (HEIGHT - 2 * PAD) / max(y_max, 1e-9)
    return x_scale, y_scale


def _frame(title: str, x_label: str, y_label: str, x_max: float, y_max: float,
           x_tick_fmt) -> list[str]:
    """Background, axes, grid lines and tick labels."""
    x_scale, y_scale = _scales(x_max, y_max)
    parts = [
        f'<svg width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" '
        f'xmlns="http://www.w3.org/2000/svg">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<line x1="{PAD}" y1="{HEIGHT - PAD}" x2="{WIDTH - PAD}" y2="{HEIGHT - PAD}" stroke="black"/>',
        f'<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{HEIGHT - PAD}" stroke="black"/>',
        f'<text x="{WIDTH / 2:.0f}" y="24" font-family="sans-serif" font-size="15" '
        f'text-anchor="middle">{title}</text>',
        f'<text x="{WIDTH / 2:.0f}" y="{HEIGHT - 12}" font-family="sans-serif" font-size="11" '
        f'text-anchor="middle">{x_label}</text>',
        f'<text x="16" y="{HEIGHT / 2:.0f}" font-family="sans-serif" font-size="11" '
        f'text-anchor="middle" transform="rotate(-90 16 {HEIGHT / 2:.0f})">{y_label}</text>',
    ]
    for i in range(5):
        y_val = y_max * i / 4.0
        y = HEIGHT - PAD - y_val * y_scale
        parts.append(f'<line x1="{PAD}" y1="{y:.1f}" x2="{WIDTH - PAD}" y2="{y:.1f}" '
                     f'stroke="#ddd" stroke-dasharray="3"/>')
        parts.append(f'<text x="{PAD - 6}" y="{y + 4:.1f}" font-family="sans-serif" '
                     f'font-size="10" text-anchor="end">{y_val:.1f}</text>')
    for i in range(5):
        x_val = x_max * i / 4.0
        x = PAD + x_val * x_scale
        parts.append(f'<text x="{x:.1f}" y="{HEIGHT - PAD + 16}" font-family="sans-serif" '
                     f'font-size="10" text-anchor="middle">{x_tick_fmt(x_val)}</text>')
    return parts


def _legend(parts: list[str], labels: list[str]) -> None:
    for i, label in enumerate(labels):
        color = PALETTE[i % len(PALETTE)]
        y = 36 + 16 * i
        parts.append(f'<rect x="{WIDTH - 130}" y="{y}" width="12" height="12" fill="{color}"/>')
        parts.append(f'<text x="{WIDTH - 112}" y="{y + 10}" font-family="sans-serif" '
                     f'font-size="11">{label}</text>')


def drop_epochs(rows: list[MetricsRow]) -> list[int]:
    """Epochs at which the recorded learning rate decreased."""
    return [b.epoch for a, b in zip(rows, rows[1:]) if b.lr < a.lr]


def plot_error_vs_epoch(series: list[tuple[str, list[MetricsRow]]], out_path: str) -> None:
    """Test error curves over epochs, one polyline per series."""
    if not series:
        raise PlotError("no metric series to plot")
    for label, rows in series:
        if not rows:
            raise PlotError(f"series {label!r} is empty")
    x_max = max(r.epoch for _, rows in series for r in rows)
    y_max = max(r.test_err for _, rows in series for r in rows) * 1.05 + 1e-9
    x_scale, y_scale = _scales(x_max, y_max)
    parts = _frame("Test error vs epoch", "epoch", "test error (%)",
                   x_max, y_max, lambda v: f"{v:.0f}")

    marks = sorted({e for _, rows in series for e in drop_epochs(rows)})
    for e in marks:
        x = PAD + e * x_scale
        parts.append(f'<line class="lr-drop" x1="{x:.1f}" y1="{PAD}" x2="{x:.1f}" '
                     f'y2="{HEIGHT - PAD}" stroke="#999" stroke-dasharray="6 3"/>')
        parts.append(f'<text x="{x + 3:.1f}" y="{PAD + 12}" font-family="sans-serif" '
                     f'font-size="9" fill="#666">lr drop @{e}</text>')

    for i, (label, rows) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(
            f"{PAD + r.epoch * x_scale:.1f},{HEIGHT - PAD - r.test_err * y_scale:.1f}"
            for r in rows
        )
        parts.append(f'<polyline class="series" points="{pts}" fill="none" '
                     f'stroke="{color}" stroke-width="2"/>')
    _legend(parts, [label for label, _ in series])
    parts.append("</svg>")
    with open(out_path, "w", encoding="utf-8") as f:
        f.write("\n".join(parts) + "\n")


def _format_count(v: float) -> str:
    return f"{v / 1e6:.1f}M" if v >= 1e6 else f"{v / 1e3:.0f}k"


def plot_error_vs_size(points: list[tuple[str, int, float]], out_path: str) -> None:
    """Final test error against parameter count, points sorted ascending.

    The connecting curve is a <path>; every series keeps its own one-point
    polyline so the per-series polyline invariant holds for this chart too.
    """
    if not points:
        raise PlotError("no (label, params, error) points to plot")
    ordered = sorted(points, key=lambda p: p[1])
    x_max = max(p[1] for p in ordered) * 1.05
    y_max = max(p[2] for p in ordered) * 1.15 + 1e-9
    x_scale, y_scale = _scales(x_max, y_max)
    parts = _frame("Test error vs model size", "parameters", "test error (%)",
                   x_max, y_max, _format_count)

    coords = [(PAD + c * x_scale, HEIGHT - PAD - e * y_scale) for _, c, e in ordered]
    if len(coords) > 1:
        d = "M " + " L ".join(f"{x:.1f} {y:.1f}" for x, y in coords)
        parts.append(f'<path class="trend" d="{d}" fill="none" stroke="#bbb" stroke-width="1.5"/>')
    for i, ((label, count, err), (x, y)) in enumerate(zip(ordered, coords)):
        color = PALETTE[i % len(PALETTE)]
        parts.append(f'<polyline class="series" points="{x:.1f},{y:.1f}" fill="none" '
                     f'stroke="{color}" stroke-width="2"/>')
        parts.append(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="4" fill="{color}"/>')
        parts.append(f'<text x="{x + 6:.1f}" y="{y - 6:.1f}" font-family="sans-serif" '
                     f'font-size="10">{label}</text>')
    _legend(parts, [label for label, _, _ in ordered])
    parts.append("</svg>")
    with open(out_path, "w", encoding="utf-8") as f:
        f.write("\n".join(parts) + "\n")


def emit_plot(csv_paths: list[str], kind: str, out_path: str,
              labels: list[str] | None = None,
              param_counts: list[int] | None = None) -> None:
    """Render one chart from metrics CSVs sharing the standard schema."""
    if not csv_paths:
        raise PlotError("no metrics files given")
    if labels is not None and len(labels) != len(csv_paths):
        raise PlotError(f"{len(labels)} labels for {len(csv_paths)} series")
    names = labels or [series_label(p) for p in csv_paths]
    series = [(name, read_metrics(p)) for name, p in zip(names, csv_paths)]
    if kind == "error-vs-epoch":
        plot_error_vs_epoch(series, out_path)
    elif kind == "error-vs-size":
        if param_counts is None or len(param_counts) != len(series):
            raise PlotError("error-vs-size needs one parameter count per series")
        points = [(name, count, rows[-1].test_err)
                  for (name, rows), count in zip(series, param_counts)]
        plot_error_vs_size(points, out_path)
    else:
        raise PlotError(f"unknown plot kind {kind!r}")
