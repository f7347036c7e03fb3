"""Minimal hand-rolled SVG line plots (one polyline per series)."""

from __future__ import annotations

import numpy as np

PALETTE = ("#1f77b4", "#2ca02c", "#d62728", "#9467bd", "#ff7f0e")
WIDTH, HEIGHT = 900, 360
MARGIN = 50


def _scale(vals, lo, hi, out_lo, out_hi):
    span = hi - lo if hi > lo else 1.0
    return out_lo + (np.asarray(vals) - lo) * (out_hi - out_lo) / span


def line_plot(path, series: dict, title: str = "", x_label: str = "step",
              y_label: str = "", vline: float | None = None) -> None:
    """Write a line plot; `series` maps name -> (x array, y array)."""
    xs = np.concatenate([np.asarray(x) for x, _ in series.values()])
    ys = np.concatenate([np.asarray(y) for _, y in series.values()])
    x_lo, x_hi = float(xs.min()), float(xs.max())
    y_lo, y_hi = float(ys.min()), float(ys.max())
    pad = 0.05 * (y_hi - y_lo if y_hi > y_lo else 1.0)
    y_lo, y_hi = y_lo - pad, y_hi + pad

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" '
        f'height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH // 2}" y="20" text-anchor="middle" '
        f'font-size="14">{title}</text>',
        f'<text x="{WIDTH // 2}" y="{HEIGHT - 8}" text-anchor="middle" '
        f'font-size="11">{x_label}</text>',
        f'<rect x="{MARGIN}" y="{MARGIN - 20}" width="{WIDTH - 2 * MARGIN}" '
        f'height="{HEIGHT - 2 * MARGIN}" fill="none" stroke="#888"/>',
    ]
    if y_label:
        parts.append(f'<text x="14" y="{HEIGHT // 2}" font-size="11" '
                     f'transform="rotate(-90 14 {HEIGHT // 2})" '
                     f'text-anchor="middle">{y_label}</text>')
    if vline is not None:
        px = float(_scale([vline], x_lo, x_hi, MARGIN, WIDTH - MARGIN)[0])
        parts.append(f'<line x1="{px:.1f}" y1="{MARGIN - 20}" x2="{px:.1f}" '
                     f'y2="{HEIGHT - MARGIN - 20}" stroke="#aaa" '
                     f'stroke-dasharray="4 3"/>')
    for k, (name, (x, y)) in enumerate(series.items()):
        px = _scale(x, x_lo, x_hi, MARGIN, WIDTH - MARGIN)
        py = _scale(y, y_lo, y_hi, HEIGHT - MARGIN - 20, MARGIN - 20)
        pts = " ".join(f"{a:.1f},{b:.1f}" for a, b in zip(px, py))
        color = PALETTE[k % len(PALETTE)]
        parts.append(f'<polyline points="{pts}" fill="none" '
                     f'stroke="{color}" stroke-width="1"/>')
        parts.append(f'<text x="{WIDTH - MARGIN + 4}" y="{MARGIN + 14 * k}" '
                     f'font-size="11" fill="{color}">{name}</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
