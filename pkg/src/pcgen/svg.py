"""Minimal SVG output: orthographic contact sheets and loss curves."""
from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

PANEL = 160
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def _doc(width: int, height: int, body: list[str]) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">')
    return "\n".join([head, f'<rect width="{width}" height="{height}" fill="white"/>', *body, "</svg>"]) + "\n"


def _panel(points: np.ndarray, x0: float, y0: float, size: float, title: str | None) -> list[str]:
    # front view: x to the right, z up; farther points (larger y) drawn first and lighter
    p = np.asarray(points, dtype=np.float64)
    lim = max(float(np.abs(p[:, [0, 2]]).max()), 1e-9)
    scale = 0.45 * size / lim
    cx, cy = x0 + size / 2, y0 + size / 2
    order = np.argsort(-p[:, 1], kind="stable")
    depth = (p[:, 1] - p[:, 1].min()) / max(np.ptp(p[:, 1]), 1e-12)
    out = [f'<g class="cloud"><rect x="{x0:.1f}" y="{y0:.1f}" width="{size}" height="{size}" '
           f'fill="none" stroke="#ccc"/>']
    for i in order:
        shade = int(40 + 150 * depth[i])
        out.append(f'<circle cx="{cx + scale * p[i, 0]:.2f}" cy="{cy - scale * p[i, 2]:.2f}" r="1.2" '
                   f'fill="rgb({shade},{shade},{shade + 40})"/>')
    if title:
        out.append(f'<text x="{x0 + 4:.1f}" y="{y0 + 12:.1f}" font-size="10">{escape(title)}</text>')
    out.append("</g>")
    return out


def contact_sheet(clouds, titles=None, columns: int = 8) -> str:
    clouds = list(clouds)
    if not clouds:
        return _doc(PANEL, PANEL, [])
    columns = max(1, min(columns, len(clouds)))
    rows = math.ceil(len(clouds) / columns)
    body = []
    for k, c in enumerate(clouds):
        r, q = divmod(k, columns)
        body += _panel(getattr(c, "points", c), q * PANEL, r * PANEL, PANEL, titles[k] if titles else None)
    return _doc(columns * PANEL, rows * PANEL, body)


def loss_curves(steps, series: dict[str, list[float]], width: int = 640, height: int = 320) -> str:
    """One polyline per series, each scaled to its own range."""
    steps = np.asarray(steps, dtype=np.float64)
    pad = 30
    body = [f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
            f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>']
    span = max(np.ptp(steps), 1.0) if len(steps) else 1.0
    for k, (name, vals) in enumerate(series.items()):
        v = np.asarray(vals, dtype=np.float64)
        color = COLORS[k % len(COLORS)]
        body.append(f'<text x="{pad + 5 + 90 * k}" y="{pad - 10}" font-size="11" fill="{color}">{escape(name)}</text>')
        ok = np.isfinite(v)
        if ok.sum() < 1:
            continue
        lo, hi = v[ok].min(), v[ok].max()
        rng = hi - lo if hi > lo else 1.0
        xs = pad + (steps[ok] - (steps[0] if len(steps) else 0)) / span * (width - 2 * pad)
        ys = height - pad - (v[ok] - lo) / rng * (height - 2 * pad)
        body.append(f'<polyline class="series" data-name="{escape(name)}" fill="none" stroke="{color}" '
                    f'points="{" ".join(f"{x:.1f},{y:.1f}" for x, y in zip(xs, ys))}"/>')
    return _doc(width, height, body)
