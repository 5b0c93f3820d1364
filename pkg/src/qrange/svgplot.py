"""Dependency-free SVG line charts for trace files.

Output is a standalone SVG string built deterministically: identical
inputs yield byte-identical files.
"""

from __future__ import annotations

import math
from pathlib import Path

from .traces import read_trace_csv

WIDTH, HEIGHT = 880, 540
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 180, 30, 50

PALETTE = [
    "#d62728",  # red
    "#1f77b4",  # blue
    "#2ca02c",  # green
    "#ff7f0e",  # orange
    "#7f7f7f",  # gray
    "#9467bd",  # purple
    "#8c564b",  # brown
    "#17becf",  # cyan
    "#bcbd22",  # olive
    "#e377c2",  # pink
]


def _nice_ticks(lo: float, hi: float, target: int = 5) -> list[float]:
    if not (math.isfinite(lo) and math.isfinite(hi)):
        return [0.0]
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / target
    mag = 10.0 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1.0, 2.0, 2.5, 5.0, 10.0) if raw <= m * mag + 1e-15 * mag)
    first = math.ceil(lo / step) * step
    ticks = []
    t = first
    while t <= hi + 1e-9 * step:
        ticks.append(0.0 if abs(t) < 1e-12 * step else t)
        t += step
    return ticks


def render_series_svg(series: list[tuple[str, list[float], list[float]]],
                      x_label: str = "step", y_label: str = "value") -> str:
    """series: (label, xs, ys) triples, one polyline each."""
    if not series:
        raise ValueError("at least one series is required")
    xs_all = [v for _, xs, _ in series for v in xs]
    ys_all = [v for _, _, ys in series for v in ys if math.isfinite(v)]
    x_lo, x_hi = min(xs_all), max(xs_all)
    y_lo, y_hi = min(ys_all), max(ys_all)
    if y_hi <= y_lo:
        y_hi = y_lo + 1.0
    pad = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad
    if x_hi <= x_lo:
        x_hi = x_lo + 1.0

    plot_w = WIDTH - MARGIN_L - MARGIN_R
    plot_h = HEIGHT - MARGIN_T - MARGIN_B

    def sx(v: float) -> float:
        return MARGIN_L + (v - x_lo) / (x_hi - x_lo) * plot_w

    def sy(v: float) -> float:
        return MARGIN_T + (y_hi - v) / (y_hi - y_lo) * plot_h

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{plot_w}" height="{plot_h}" '
        'fill="none" stroke="#333" stroke-width="1"/>',
    ]
    font = 'font-family="Helvetica,Arial,sans-serif" font-size="12"'
    for t in _nice_ticks(x_lo, x_hi):
        px = sx(t)
        out.append(f'<line x1="{px:.2f}" y1="{MARGIN_T + plot_h}" x2="{px:.2f}" '
                   f'y2="{MARGIN_T + plot_h + 5}" stroke="#333"/>')
        out.append(f'<text x="{px:.2f}" y="{MARGIN_T + plot_h + 20}" text-anchor="middle" '
                   f'{font}>{t:.6g}</text>')
    for t in _nice_ticks(y_lo, y_hi):
        py = sy(t)
        out.append(f'<line x1="{MARGIN_L - 5}" y1="{py:.2f}" x2="{MARGIN_L}" '
                   f'y2="{py:.2f}" stroke="#333"/>')
        out.append(f'<text x="{MARGIN_L - 9}" y="{py + 4:.2f}" text-anchor="end" '
                   f'{font}>{t:.6g}</text>')
    out.append(f'<text x="{MARGIN_L + plot_w / 2:.2f}" y="{HEIGHT - 12}" '
               f'text-anchor="middle" {font}>{x_label}</text>')
    out.append(f'<text x="18" y="{MARGIN_T + plot_h / 2:.2f}" text-anchor="middle" {font} '
               f'transform="rotate(-90 18 {MARGIN_T + plot_h / 2:.2f})">{y_label}</text>')

    for i, (label, xs, ys) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys) if math.isfinite(y))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = MARGIN_T + 14 + 18 * i
        lx = MARGIN_L + plot_w + 12
        out.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 22}" y2="{ly - 4}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 28}" y="{ly}" {font}>{label}</text>')

    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_svg_plot(trace_paths: list[str | Path], fields: list[str], out_path: str | Path) -> None:
    """One polyline per (trace, field); legend from the trace metadata."""
    if not trace_paths:
        raise ValueError("at least one trace file is required")
    if not fields:
        raise ValueError("at least one field is required")
    series = []
    for path in trace_paths:
        records, meta = read_trace_csv(path)
        if meta is not None and "label" in meta:
            base = meta["label"]
        else:
            base = Path(path).stem
        xs = [float(r.step) for r in records]
        for f in fields:
            ys = [float(getattr(r, f)) for r in records]
            label = base if len(fields) == 1 else f"{base} {f}"
            series.append((label, xs, ys))
    svg = render_series_svg(series, y_label=", ".join(fields))
    with open(out_path, "w") as fh:
        fh.write(svg)
