"""Minimal SVG line plots (no plotting dependency)."""
from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((s * mag for s in (1, 2, 5, 10) if s * mag >= raw), default=10 * mag)
    start = math.ceil(lo / step) * step
    out = []
    v = start
    while v <= hi + 1e-12 * step:
        out.append(round(v, 12))
        v += step
    return out


def line_plot(series, path=None, *, title="", xlabel="", ylabel="", width=640, height=420,
              markers=None, dashed=()):
    """Write an SVG with one polyline per ``(label, x, y)`` entry; returns the text.

    ``markers`` is an optional list of ``(x, y, label)`` points drawn as dots.
    Non-finite samples break the line.
    """
    ml, mr, mt, mb = 64, 16, 32, 48
    xs = np.concatenate([np.asarray(s[1], float) for s in series])
    ys = np.concatenate([np.asarray(s[2], float) for s in series])
    fin = np.isfinite(xs) & np.isfinite(ys)
    if not fin.any():
        raise ValueError("nothing finite to plot")
    x0, x1 = float(xs[fin].min()), float(xs[fin].max())
    y0, y1 = float(ys[fin].min()), float(ys[fin].max())
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad
    pw, ph = width - ml - mr, height - mt - mb

    def px(x):
        return ml + (x - x0) / (x1 - x0) * pw

    def py(y):
        return mt + (y1 - y) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="sans-serif" font-size="11">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>']
    for tx in _ticks(x0, x1):
        X = px(tx)
        out.append(f'<line x1="{X:.2f}" y1="{mt + ph}" x2="{X:.2f}" y2="{mt + ph + 4}" stroke="#444"/>')
        out.append(f'<text x="{X:.2f}" y="{mt + ph + 16}" text-anchor="middle">{tx:g}</text>')
    for ty in _ticks(y0, y1):
        Y = py(ty)
        out.append(f'<line x1="{ml - 4}" y1="{Y:.2f}" x2="{ml}" y2="{Y:.2f}" stroke="#444"/>')
        out.append(f'<text x="{ml - 6}" y="{Y + 4:.2f}" text-anchor="end">{ty:g}</text>')
    if title:
        out.append(f'<text x="{width / 2}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>')
    if xlabel:
        out.append(f'<text x="{ml + pw / 2}" y="{height - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    if ylabel:
        out.append(f'<text x="14" y="{mt + ph / 2}" text-anchor="middle" '
                   f'transform="rotate(-90 14 {mt + ph / 2})">{escape(ylabel)}</text>')
    for k, (label, x, y) in enumerate(series):
        x, y = np.asarray(x, float), np.asarray(y, float)
        color = _COLORS[k % len(_COLORS)]
        dash = ' stroke-dasharray="6 4"' if label in dashed else ""
        seg = []
        for xi, yi in zip(x, y):
            if math.isfinite(xi) and math.isfinite(yi):
                seg.append(f"{px(xi):.2f},{py(yi):.2f}")
            elif seg:
                out.append(f'<polyline points="{" ".join(seg)}" fill="none" stroke="{color}"{dash}/>')
                seg = []
        if seg:
            out.append(f'<polyline points="{" ".join(seg)}" fill="none" stroke="{color}"{dash}/>')
        ly = mt + 14 + 14 * k
        out.append(f'<line x1="{ml + pw - 120}" y1="{ly - 4}" x2="{ml + pw - 100}" y2="{ly - 4}" '
                   f'stroke="{color}"{dash}/>')
        out.append(f'<text x="{ml + pw - 96}" y="{ly}">{escape(str(label))}</text>')
    for mx, my, mlabel in markers or ():
        out.append(f'<circle cx="{px(mx):.2f}" cy="{py(my):.2f}" r="3" fill="black"/>')
        if mlabel:
            out.append(f'<text x="{px(mx) + 5:.2f}" y="{py(my) - 5:.2f}">{escape(mlabel)}</text>')
    out.append("</svg>")
    text = "\n".join(out) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text
