"""Minimal static SVG line plots (mean line plus shaded interval per series)."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")


def line_plot_svg(series: dict, title: str, xlabel: str, ylabel: str, width=640, height=400) -> str:
    """``series`` maps a label to ``(x, mean, low, high)`` arrays."""
    left, right, top, bottom = 70, 20, 40, 50
    xs = [np.asarray(v[0], dtype=float) for v in series.values()]
    ys = [np.asarray(a, dtype=float) for v in series.values() for a in v[1:]]
    finite = np.concatenate([y[np.isfinite(y)] for y in ys] or [np.zeros(1)])
    xmin = min((x.min() for x in xs if x.size), default=0.0)
    xmax = max((x.max() for x in xs if x.size), default=1.0)
    ymin, ymax = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
    if xmax == xmin:
        xmax = xmin + 1
    if ymax == ymin:
        ymax = ymin + 1

    def px(x):
        return left + (x - xmin) / (xmax - xmin) * (width - left - right)

    def py(y):
        return height - bottom - (y - ymin) / (ymax - ymin) * (height - top - bottom)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>',
        f'<line x1="{left}" y1="{height - bottom}" x2="{width - right}" y2="{height - bottom}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{height - bottom}" stroke="black"/>',
        f'<text x="{width / 2}" y="{height - 12}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
        f'<text x="16" y="{height / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 16 {height / 2})">{escape(ylabel)}</text>',
    ]
    for value, y in ((ymin, height - bottom), (ymax, top)):
        out.append(f'<text x="{left - 6}" y="{y + 4:.1f}" text-anchor="end" font-size="10">{value:.3g}</text>')
    for value, anchor in ((xmin, "start"), (xmax, "end")):
        out.append(f'<text x="{px(value):.1f}" y="{height - bottom + 16}" text-anchor="{anchor}" '
                   f'font-size="10">{value:.6g}</text>')
    for k, (label, (x, mean, low, high)) in enumerate(series.items()):
        color = PALETTE[k % len(PALETTE)]
        x, mean, low, high = (np.asarray(a, dtype=float) for a in (x, mean, low, high))
        band = [f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, high)]
        band += [f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x[::-1], low[::-1])]
        if band:
            out.append(f'<polygon points="{" ".join(band)}" fill="{color}" fill-opacity="0.2" stroke="none"/>')
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, mean))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5">'
                   f"<title>{escape(label)}</title></polyline>")
        out.append(f'<text x="{width - right - 90}" y="{top + 14 * (k + 1)}" fill="{color}" '
                   f'font-size="12">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
