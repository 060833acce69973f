"""Minimal SVG 1.1 line plots on log-log axes."""

import math
from xml.sax.saxutils import escape

__all__ = ["loglog_plot"]

_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"]


def _decades(lo, hi):
    a, b = math.floor(math.log10(lo)), math.ceil(math.log10(hi))
    return [10.0 ** k for k in range(a, b + 1)]


def _fmt(x):
    return f"{x:.2f}"


def loglog_plot(path, series, title="", xlabel="", ylabel="", width=640, height=420):
    """Write ``series`` (a list of ``(label, xs, ys)``) as polylines on log10 axes.

    Nonpositive points are skipped.  Ticks sit on powers of ten.
    """
    pts = [(x, y) for _, xs, ys in series for x, y in zip(xs, ys) if x > 0 and y > 0]
    if not pts:
        raise ValueError("nothing positive to plot on log axes")
    xmin, xmax = min(p[0] for p in pts), max(p[0] for p in pts)
    ymin, ymax = min(p[1] for p in pts), max(p[1] for p in pts)
    if xmin == xmax:
        xmin, xmax = xmin / 2, xmax * 2
    if ymin == ymax:
        ymin, ymax = ymin / 2, ymax * 2
    lx0, lx1 = math.log10(xmin), math.log10(xmax)
    ly0, ly1 = math.log10(ymin), math.log10(ymax)
    pad_x = 0.05 * (lx1 - lx0)
    pad_y = 0.08 * (ly1 - ly0)
    lx0, lx1, ly0, ly1 = lx0 - pad_x, lx1 + pad_x, ly0 - pad_y, ly1 + pad_y
    left, right, top, bottom = 70, 20, 40, 55
    pw, ph = width - left - right, height - top - bottom

    def sx(x):
        return left + (math.log10(x) - lx0) / (lx1 - lx0) * pw

    def sy(y):
        return top + (ly1 - math.log10(y)) / (ly1 - ly0) * ph

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for t in _decades(10 ** lx0, 10 ** lx1):
        if 10 ** lx0 <= t <= 10 ** lx1:
            X = _fmt(sx(t))
            out.append(f'<line x1="{X}" y1="{top}" x2="{X}" y2="{top + ph}" stroke="#ddd"/>')
            out.append(f'<text x="{X}" y="{top + ph + 18}" font-size="12" '
                       f'text-anchor="middle">{t:g}</text>')
    for t in _decades(10 ** ly0, 10 ** ly1):
        if 10 ** ly0 <= t <= 10 ** ly1:
            Y = _fmt(sy(t))
            out.append(f'<line x1="{left}" y1="{Y}" x2="{left + pw}" y2="{Y}" stroke="#ddd"/>')
            out.append(f'<text x="{left - 6}" y="{Y}" font-size="12" text-anchor="end" '
                       f'dominant-baseline="middle">{t:g}</text>')
    for i, (label, xs, ys) in enumerate(series):
        coords = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in zip(xs, ys)
                          if x > 0 and y > 0)
        color = _COLORS[i % len(_COLORS)]
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                   f'points="{coords}"/>')
        out.append(f'<text x="{left + pw - 8}" y="{top + 16 + 16 * i}" font-size="12" '
                   f'text-anchor="end" fill="{color}">{escape(label)}</text>')
    out.append(f'<text x="{width / 2}" y="22" font-size="14" text-anchor="middle">'
               f'{escape(title)}</text>')
    out.append(f'<text x="{left + pw / 2}" y="{height - 12}" font-size="12" '
               f'text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{top + ph / 2}" font-size="12" text-anchor="middle" '
               f'transform="rotate(-90 16 {top + ph / 2})">{escape(ylabel)}</text>')
    out.append("</svg>")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(out) + "\n")
