"""Minimal static SVG charts (scatter with identity line, line panels)."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape, quoteattr

import numpy as np

W, H = 420, 360
PAD = 48


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _range(values):
    v = np.asarray([x for x in values if math.isfinite(x)], dtype=float)
    if v.size == 0:
        return 0.0, 1.0
    lo, hi = float(v.min()), float(v.max())
    if hi - lo < 1e-12 * max(1.0, abs(hi)):
        lo, hi = lo - 0.5, hi + 0.5
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


class _Frame:
    def __init__(self, x0, y0, width, height, xr, yr):
        self.x0, self.y0, self.w, self.h = x0, y0, width, height
        self.xr, self.yr = xr, yr

    def px(self, x):
        return self.x0 + PAD + (x - self.xr[0]) / (self.xr[1] - self.xr[0]) * (self.w - 1.5 * PAD)

    def py(self, y):
        return self.y0 + self.h - PAD - (y - self.yr[0]) / (self.yr[1] - self.yr[0]) * (self.h - 1.5 * PAD)

    def axes(self, xlabel, ylabel, title):
        x1, x2 = self.x0 + PAD, self.x0 + self.w - PAD / 2
        y1, y2 = self.y0 + self.h - PAD, self.y0 + PAD / 2
        out = [
            f'<line x1="{x1:.2f}" y1="{y1:.2f}" x2="{x2:.2f}" y2="{y1:.2f}" stroke="black"/>',
            f'<line x1="{x1:.2f}" y1="{y1:.2f}" x2="{x1:.2f}" y2="{y2:.2f}" stroke="black"/>',
            f'<text x="{(x1 + x2) / 2:.2f}" y="{y1 + 32:.2f}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
            f'<text x="{self.x0 + 14:.2f}" y="{(y1 + y2) / 2:.2f}" text-anchor="middle" font-size="12" '
            f'transform="rotate(-90 {self.x0 + 14:.2f} {(y1 + y2) / 2:.2f})">{escape(ylabel)}</text>',
            f'<text x="{(x1 + x2) / 2:.2f}" y="{self.y0 + 16:.2f}" text-anchor="middle" font-size="13">{escape(title)}</text>',
        ]
        for tick in np.linspace(self.xr[0], self.xr[1], 5):
            out.append(f'<text x="{self.px(tick):.2f}" y="{y1 + 14:.2f}" text-anchor="middle" '
                       f'font-size="10">{tick:.3g}</text>')
        for tick in np.linspace(self.yr[0], self.yr[1], 5):
            out.append(f'<text x="{x1 - 4:.2f}" y="{self.py(tick) + 3:.2f}" text-anchor="end" '
                       f'font-size="10">{tick:.3g}</text>')
        return out


def _document(width, height, body):
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">')
    return "\n".join([head, '<rect width="100%" height="100%" fill="white"/>', *body, "</svg>"]) + "\n"


def scatter(xs, ys, labels, xlabel: str, ylabel: str, title: str = "") -> str:
    """Scatter plot with a dashed 45-degree line.

    Each point carries ``data-label``, ``data-x`` and ``data-y`` attributes with
    the exact plotted values.
    """
    xs = [float(x) for x in xs]
    ys = [float(y) for y in ys]
    lo, hi = _range(xs + ys)
    f = _Frame(0, 0, W, H, (lo, hi), (lo, hi))
    body = f.axes(xlabel, ylabel, title)
    body.append(f'<line class="identity" x1="{f.px(lo):.2f}" y1="{f.py(lo):.2f}" x2="{f.px(hi):.2f}" '
                f'y2="{f.py(hi):.2f}" stroke="gray" stroke-dasharray="4 3"/>')
    for x, y, lab in zip(xs, ys, labels):
        if not (math.isfinite(x) and math.isfinite(y)):
            continue
        body.append(f'<circle class="point" cx="{f.px(x):.2f}" cy="{f.py(y):.2f}" r="3" fill="steelblue" '
                    f'data-label={quoteattr(str(lab))} data-x="{_fmt(x)}" data-y="{_fmt(y)}">'
                    f'<title>{escape(str(lab))}</title></circle>')
    return _document(W, H, body)


def line_panels(panels, xlabel: str = "period") -> str:
    """Side-by-side line charts.

    ``panels`` is a list of ``(title, x, {series_name: y})``; every panel
    marks ``x = marker`` when a fourth element is given.
    """
    colors = ("black", "firebrick", "steelblue", "darkgreen")
    body = []
    for k, panel in enumerate(panels):
        title, x, series = panel[:3]
        marker = panel[3] if len(panel) > 3 else None
        x = np.asarray(x, dtype=float)
        allv = [v for ys in series.values() for v in np.asarray(ys, dtype=float)]
        f = _Frame(k * W, 0, W, H, _range(list(x)), _range(allv))
        body.extend(f.axes(xlabel, "outcome", title))
        if marker is not None:
            body.append(f'<line x1="{f.px(marker):.2f}" y1="{f.py(f.yr[0]):.2f}" x2="{f.px(marker):.2f}" '
                        f'y2="{f.py(f.yr[1]):.2f}" stroke="gray" stroke-dasharray="2 2"/>')
        for i, (name, ys) in enumerate(series.items()):
            pts = " ".join(f"{f.px(a):.2f},{f.py(b):.2f}" for a, b in zip(x, np.asarray(ys, dtype=float)))
            col = colors[i % len(colors)]
            body.append(f'<polyline class="series" data-name={quoteattr(name)} fill="none" stroke="{col}" '
                        f'points="{pts}"/>')
            body.append(f'<text x="{k * W + W - 90}" y="{40 + 14 * i}" font-size="11" fill="{col}">'
                        f'{escape(name)}</text>')
    return _document(W * len(panels), H, body)
