"""A minimal deterministic SVG plotter: line charts, scatters, heatmaps, dendrograms.

Coordinates are written with fixed precision so identical inputs give
identical bytes.
"""

from html import escape

import numpy as np

WIDTH, HEIGHT = 480, 320
MARGIN = 48
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f")


def _f(x):
    return f"{float(x):.3f}"


def _range(values):
    if isinstance(values, (list, tuple)):
        # series may differ in length
        parts = [np.ravel(np.asarray(v, dtype=np.float64)) for v in values]
        v = np.concatenate(parts) if parts else np.empty(0)
    else:
        v = np.ravel(np.asarray(values, dtype=np.float64))
    v = v[np.isfinite(v)]
    if v.size == 0:
        return 0.0, 1.0
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    return lo, hi


class _Canvas:
    def __init__(self, title, width=WIDTH, height=HEIGHT):
        self.w, self.h = width, height
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">',
            f'<rect width="{width}" height="{height}" fill="white"/>',
            f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="13" '
            f'font-family="sans-serif">{escape(title)}</text>',
        ]

    def add(self, s):
        self.parts.append(s)

    def text(self, x, y, s, anchor="middle", size=10):
        self.add(f'<text x="{_f(x)}" y="{_f(y)}" text-anchor="{anchor}" font-size="{size}" '
                 f'font-family="sans-serif">{escape(str(s))}</text>')

    def render(self):
        return "\n".join(self.parts + ["</svg>"]) + "\n"


class _Axes:
    def __init__(self, canvas, xr, yr, xlabel="", ylabel=""):
        self.c = canvas
        self.x0, self.x1 = MARGIN, canvas.w - MARGIN / 2
        self.y0, self.y1 = canvas.h - MARGIN, MARGIN / 1.5
        self.xr, self.yr = xr, yr
        c = canvas
        c.add(f'<line x1="{_f(self.x0)}" y1="{_f(self.y0)}" x2="{_f(self.x1)}" y2="{_f(self.y0)}" stroke="black"/>')
        c.add(f'<line x1="{_f(self.x0)}" y1="{_f(self.y0)}" x2="{_f(self.x0)}" y2="{_f(self.y1)}" stroke="black"/>')
        for v, anchor in ((xr[0], "start"), (xr[1], "end")):
            c.text(self.px(v), self.y0 + 14, f"{v:.3g}", anchor)
        for v in yr:
            c.text(self.x0 - 4, self.py(v) + 3, f"{v:.3g}", "end")
        if xlabel:
            c.text((self.x0 + self.x1) / 2, canvas.h - 10, xlabel)
        if ylabel:
            c.add(f'<text x="12" y="{_f((self.y0 + self.y1) / 2)}" font-size="10" font-family="sans-serif" '
                  f'text-anchor="middle" transform="rotate(-90 12 {_f((self.y0 + self.y1) / 2)})">'
                  f'{escape(ylabel)}</text>')

    def px(self, x):
        lo, hi = self.xr
        return self.x0 + (x - lo) / (hi - lo) * (self.x1 - self.x0)

    def py(self, y):
        lo, hi = self.yr
        return self.y0 - (y - lo) / (hi - lo) * (self.y0 - self.y1)


def line_chart(series, title="", xlabel="", ylabel="", bands=None):
    """``series`` maps a label to ``(x, y)``; optional ``bands`` maps a label to a y half-width."""
    bands = bands or {}
    xs = [np.asarray(x, dtype=np.float64) for x, _ in series.values()]
    ys = [np.asarray(y, dtype=np.float64) for _, y in series.values()]
    ylo = [y - np.asarray(bands.get(k, 0.0)) for k, (_, y) in zip(series, series.values())]
    yhi = [y + np.asarray(bands.get(k, 0.0)) for k, (_, y) in zip(series, series.values())]
    c = _Canvas(title)
    ax = _Axes(c, _range(xs or [0, 1]), _range(ylo + yhi + ys or [0, 1]), xlabel, ylabel)
    for i, (label, (x, y)) in enumerate(series.items()):
        col = PALETTE[i % len(PALETTE)]
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if label in bands:
            b = np.asarray(bands[label], dtype=np.float64) * np.ones_like(y)
            pts = [(ax.px(a), ax.py(v)) for a, v in zip(x, y + b)]
            pts += [(ax.px(a), ax.py(v)) for a, v in zip(x[::-1], (y - b)[::-1])]
            c.add('<polygon points="' + " ".join(f"{_f(p)},{_f(q)}" for p, q in pts)
                  + f'" fill="{col}" fill-opacity="0.2" stroke="none"/>')
        pts = " ".join(f"{_f(ax.px(a))},{_f(ax.py(v))}" for a, v in zip(x, y) if np.isfinite(v))
        c.add(f'<polyline points="{pts}" fill="none" stroke="{col}" stroke-width="1.5"/>')
        c.text(ax.x1 - 4, ax.y1 + 12 * (i + 1), label, "end")
        c.add(f'<rect x="{_f(ax.x1 - 2)}" y="{_f(ax.y1 + 12 * (i + 1) - 7)}" width="6" height="6" fill="{col}"/>')
    return c.render()


def scatter(points, title="", xlabel="", ylabel="", fit_line=None, labels=None, groups=None):
    """Scatter of ``(x, y)`` rows, optionally coloured by ``groups`` and with a fitted line."""
    P = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    c = _Canvas(title)
    ax = _Axes(c, _range(P[:, 0]), _range(P[:, 1]), xlabel, ylabel)
    for i, (x, y) in enumerate(P):
        g = 0 if groups is None else int(groups[i])
        c.add(f'<circle cx="{_f(ax.px(x))}" cy="{_f(ax.py(y))}" r="3.5" fill="{PALETTE[g % len(PALETTE)]}"/>')
        if labels is not None:
            c.text(ax.px(x) + 5, ax.py(y) - 4, labels[i], "start", 8)
    if fit_line is not None:
        a, b = fit_line
        lo, hi = ax.xr
        c.add(f'<line x1="{_f(ax.px(lo))}" y1="{_f(ax.py(a + b * lo))}" x2="{_f(ax.px(hi))}" '
              f'y2="{_f(ax.py(a + b * hi))}" stroke="black" stroke-dasharray="4 3"/>')
    return c.render()


def heatmap(matrix, title="", row_labels=None, col_labels=None):
    """Grey-to-blue heatmap scaled to the matrix range."""
    M = np.asarray(matrix, dtype=np.float64)
    n, m = M.shape
    c = _Canvas(title, WIDTH, WIDTH)
    lo, hi = _range(M)
    side = WIDTH - 2 * MARGIN
    cw, ch = side / m, side / n
    for i in range(n):
        for j in range(m):
            v = (M[i, j] - lo) / (hi - lo) if np.isfinite(M[i, j]) else 0.0
            shade = int(round(255 * (1 - v)))
            c.add(f'<rect x="{_f(MARGIN + j * cw)}" y="{_f(MARGIN + i * ch)}" width="{_f(cw)}" '
                  f'height="{_f(ch)}" fill="rgb({shade},{shade},255)"/>')
    if row_labels is not None and n <= 40:
        for i, lab in enumerate(row_labels):
            c.text(MARGIN - 3, MARGIN + (i + 0.7) * ch, lab, "end", 7)
    if col_labels is not None and m <= 40:
        for j, lab in enumerate(col_labels):
            c.text(MARGIN + (j + 0.5) * cw, MARGIN - 3, lab, "middle", 7)
    c.text(WIDTH / 2, WIDTH - 16, f"range [{lo:.3g}, {hi:.3g}]")
    return c.render()


def dendrogram(merges, labels, title=""):
    """Draw a merge tree given ``(a, b, height, size)`` rows in scipy numbering."""
    n = len(labels)
    c = _Canvas(title)
    if n == 0:
        return c.render()
    # leaf order from a depth-first walk of the final tree
    children = {n + i: (int(a), int(b)) for i, (a, b, _, _) in enumerate(merges)}
    heights = {n + i: float(h) for i, (_, _, h, _) in enumerate(merges)}
    root = n + len(merges) - 1 if merges else 0
    order, stack = [], [root]
    while stack:
        node = stack.pop()
        if node < n:
            order.append(node)
        else:
            a, b = children[node]
            stack.extend((b, a))
    hmax = max(heights.values()) if heights else 1.0
    hmax = hmax if hmax > 0 else 1.0
    ax = _Axes(c, (0.0, float(max(n - 1, 1))), (0.0, hmax), "", "height")
    pos = {leaf: float(i) for i, leaf in enumerate(order)}
    lvl = {leaf: 0.0 for leaf in range(n)}
    for node in sorted(children):
        a, b = children[node]
        h = heights[node]
        for child in (a, b):
            c.add(f'<line x1="{_f(ax.px(pos[child]))}" y1="{_f(ax.py(lvl[child]))}" '
                  f'x2="{_f(ax.px(pos[child]))}" y2="{_f(ax.py(h))}" stroke="black"/>')
        c.add(f'<line x1="{_f(ax.px(pos[a]))}" y1="{_f(ax.py(h))}" x2="{_f(ax.px(pos[b]))}" '
              f'y2="{_f(ax.py(h))}" stroke="black"/>')
        pos[node] = (pos[a] + pos[b]) / 2
        lvl[node] = h
    for leaf in order:
        c.text(ax.px(pos[leaf]), ax.y0 + 26, labels[leaf], "middle", 8)
    return c.render()
