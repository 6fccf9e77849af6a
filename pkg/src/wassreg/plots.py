"""Dependency-free SVG scatter export for point-cloud snapshots.

Output is deterministic: fixed viewport, fixed palette, coordinates rounded
to three decimals. Measures in more than two dimensions are drawn by their
first two coordinates.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .measures import EmpiricalMeasure

WIDTH = 480
HEIGHT = 480
MARGIN = 40
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")


def _bounds(clouds):
    pts = np.vstack([m.points[:, :2] for _, m in clouds])
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    span = np.maximum(hi - lo, 1e-9)
    pad = 0.05 * span
    return lo - pad, span + 2 * pad


def render_clouds_svg(path, clouds, title: str = "") -> None:
    """Write one SVG with a circle per support point and a small legend.

    ``clouds`` is a list of (label, EmpiricalMeasure).
    """
    lo, span = _bounds(clouds)
    inner_w = WIDTH - 2 * MARGIN
    inner_h = HEIGHT - 2 * MARGIN
    scale = min(inner_w / span[0], inner_h / span[1])

    def to_px(p):
        x = MARGIN + (p[0] - lo[0]) * scale
        y = HEIGHT - MARGIN - (p[1] - lo[1]) * scale
        return f"{x:.3f}", f"{y:.3f}"

    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
    ]
    if title:
        lines.append(
            f'<text x="{WIDTH // 2}" y="20" text-anchor="middle" '
            f'font-family="sans-serif" font-size="14">{title}</text>'
        )
    for i, (label, measure) in enumerate(clouds):
        color = PALETTE[i % len(PALETTE)]
        for p in measure.points:
            x, y = to_px(p)
            lines.append(f'<circle cx="{x}" cy="{y}" r="3" fill="{color}" fill-opacity="0.6"/>')
        ly = 36 + 16 * i
        lines.append(f'<circle cx="{WIDTH - 120}" cy="{ly}" r="4" fill="{color}"/>')
        lines.append(
            f'<text x="{WIDTH - 110}" y="{ly + 4}" font-family="sans-serif" '
            f'font-size="12">{label}</text>'
        )
    lines.append("</svg>")
    Path(path).write_text("\n".join(lines) + "\n")
