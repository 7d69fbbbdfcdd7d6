"""Minimal deterministic SVG plotting (no third-party dependencies).

Figures are pure functions of their input data: fixed canvas geometry,
fixed fonts, fixed float formatting, no timestamps and no randomness, so
re-rendering the same data yields byte-identical files.  Marks are colored
by test accuracy on a fixed ramp over [0, 100] (blue at 0 through red at
100) so figures are comparable across runs.
"""

from __future__ import annotations

import math

WIDTH = 640
HEIGHT = 480
MARGIN_LEFT = 72
MARGIN_RIGHT = 96
MARGIN_TOP = 44
MARGIN_BOTTOM = 56

RAMP_LOW = (0, 0, 255)    # accuracy 0
RAMP_HIGH = (255, 0, 0)   # accuracy 100


def accuracy_color(acc: float) -> str:
    """Fixed blue-to-red ramp over accuracy in [0, 100]."""
    t = min(max(acc, 0.0), 100.0) / 100.0
    rgb = tuple(round(lo + t * (hi - lo)) for lo, hi in zip(RAMP_LOW, RAMP_HIGH))
    return "#{:02x}{:02x}{:02x}".format(*rgb)


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _fmt_tick(v: float) -> str:
    v = v + 0.0  # normalize -0.0
    return f"{v:.6g}"


def nice_ticks(lo: float, hi: float, target: int = 5):
    """Round tick positions covering [lo, hi] at a 1/2/5 step."""
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / max(target, 1)
    mag = 10.0 ** math.floor(math.log10(raw))
    for mult in (1.0, 2.0, 5.0, 10.0):
        step = mult * mag
        if raw <= step:
            break
    start = math.ceil(lo / step) * step
    ticks = []
    t = start
    while t <= hi + step * 1e-9:
        ticks.append(round(t / step) * step)
        t += step
    return ticks


class SvgFigure:
    """Accumulates marks in data coordinates, then renders axes + marks."""

    def __init__(self, title: str, xlabel: str, ylabel: str):
        self.title = title
        self.xlabel = xlabel
        self.ylabel = ylabel
        self._marks: list[str] = []
        self._limits = None  # (xlo, xhi, ylo, yhi)

    # -- coordinate handling -------------------------------------------------

    def set_limits(self, xs, ys, pad: float = 0.05):
        xs = [x for x in xs if math.isfinite(x)]
        ys = [y for y in ys if math.isfinite(y)]
        if not xs or not ys:
            self._limits = (0.0, 1.0, 0.0, 1.0)
            return
        xlo, xhi = min(xs), max(xs)
        ylo, yhi = min(ys), max(ys)
        xpad = (xhi - xlo) * pad or max(abs(xlo), 1.0) * 1e-3
        ypad = (yhi - ylo) * pad or max(abs(ylo), 1.0) * 1e-3
        self._limits = (xlo - xpad, xhi + xpad, ylo - ypad, yhi + ypad)

    def _px(self, x: float) -> float:
        xlo, xhi, _, _ = self._limits
        frac = (x - xlo) / (xhi - xlo)
        return MARGIN_LEFT + frac * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)

    def _py(self, y: float) -> float:
        _, _, ylo, yhi = self._limits
        frac = (y - ylo) / (yhi - ylo)
        return HEIGHT - MARGIN_BOTTOM - frac * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)

    # -- marks ---------------------------------------------------------------

    def circle(self, x: float, y: float, color: str, r: float = 3.5,
               opacity: float = 0.85):
        self._marks.append(
            f'<circle cx="{_fmt(self._px(x))}" cy="{_fmt(self._py(y))}" '
            f'r="{_fmt(r)}" fill="{color}" fill-opacity="{opacity:g}"/>')

    def polyline(self, xs, ys, color: str, width: float = 1.5,
                 opacity: float = 0.9):
        if len(xs) < 2:
            return
        pts = " ".join(f"{_fmt(self._px(x))},{_fmt(self._py(y))}"
                       for x, y in zip(xs, ys))
        self._marks.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" '
            f'stroke-width="{width:g}" stroke-opacity="{opacity:g}"/>')

    def step_line(self, edges, values, color: str, width: float = 1.0,
                  opacity: float = 0.35):
        """Histogram outline: horizontal segment per bin."""
        xs, ys = [], []
        for i, v in enumerate(values):
            xs.extend([edges[i], edges[i + 1]])
            ys.extend([v, v])
        self.polyline(xs, ys, color, width=width, opacity=opacity)

    # -- rendering -----------------------------------------------------------

    def _axes_svg(self) -> list[str]:
        xlo, xhi, ylo, yhi = self._limits
        left, right = MARGIN_LEFT, WIDTH - MARGIN_RIGHT
        top, bottom = MARGIN_TOP, HEIGHT - MARGIN_BOTTOM
        parts = [
            f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>',
            f'<rect x="{left}" y="{top}" width="{right - left}" '
            f'height="{bottom - top}" fill="none" stroke="#000000"/>',
            f'<text x="{(left + right) / 2:g}" y="{MARGIN_TOP - 16}" '
            f'text-anchor="middle" font-family="sans-serif" font-size="14">'
            f'{_escape(self.title)}</text>',
            f'<text x="{(left + right) / 2:g}" y="{HEIGHT - 12}" '
            f'text-anchor="middle" font-family="sans-serif" font-size="12">'
            f'{_escape(self.xlabel)}</text>',
            f'<text x="16" y="{(top + bottom) / 2:g}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="12" '
            f'transform="rotate(-90 16 {(top + bottom) / 2:g})">'
            f'{_escape(self.ylabel)}</text>',
        ]
        for t in nice_ticks(xlo, xhi):
            px = self._px(t)
            parts.append(f'<line x1="{_fmt(px)}" y1="{bottom}" x2="{_fmt(px)}" '
                         f'y2="{bottom + 5}" stroke="#000000"/>')
            parts.append(f'<text x="{_fmt(px)}" y="{bottom + 18}" '
                         f'text-anchor="middle" font-family="sans-serif" '
                         f'font-size="10">{_fmt_tick(t)}</text>')
        for t in nice_ticks(ylo, yhi):
            py = self._py(t)
            parts.append(f'<line x1="{left - 5}" y1="{_fmt(py)}" x2="{left}" '
                         f'y2="{_fmt(py)}" stroke="#000000"/>')
            parts.append(f'<text x="{left - 8}" y="{_fmt(py)}" dy="3" '
                         f'text-anchor="end" font-family="sans-serif" '
                         f'font-size="10">{_fmt_tick(t)}</text>')
        return parts

    def _legend_svg(self) -> list[str]:
        """Vertical accuracy ramp: low (blue, bottom) to high (red, top)."""
        x = WIDTH - MARGIN_RIGHT + 28
        top, bottom = MARGIN_TOP + 10, HEIGHT - MARGIN_BOTTOM - 10
        steps = 32
        h = (bottom - top) / steps
        parts = [f'<text x="{x + 10}" y="{top - 8}" text-anchor="middle" '
                 f'font-family="sans-serif" font-size="10">acc %</text>']
        for i in range(steps):
            acc = 100.0 * (1.0 - (i + 0.5) / steps)
            y = top + i * h
            parts.append(f'<rect x="{x}" y="{_fmt(y)}" width="20" '
                         f'height="{_fmt(h + 0.5)}" fill="{accuracy_color(acc)}"/>')
        parts.append(f'<text x="{x + 24}" y="{top + 4}" font-family="sans-serif" '
                     f'font-size="10">100</text>')
        parts.append(f'<text x="{x + 24}" y="{bottom + 4}" font-family="sans-serif" '
                     f'font-size="10">0</text>')
        return parts

    def render(self) -> str:
        if self._limits is None:
            self._limits = (0.0, 1.0, 0.0, 1.0)
        body = self._axes_svg() + self._legend_svg() + self._marks
        return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" '
                f'height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">\n'
                + "\n".join(body) + "\n</svg>\n")


def _escape(text: str) -> str:
    return (text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;"))


# ---------------------------------------------------------------------------
# figure builders
# ---------------------------------------------------------------------------

def render_scatter(points, title: str, xlabel: str, ylabel: str) -> str:
    """Scatter of (x, y, accuracy) triples colored by accuracy."""
    fig = SvgFigure(title, xlabel, ylabel)
    fig.set_limits([p[0] for p in points], [p[1] for p in points])
    for x, y, acc in points:
        fig.circle(x, y, accuracy_color(acc))
    return fig.render()


def render_lines(series, title: str, xlabel: str, ylabel: str) -> str:
    """Per-trial curves: series of (xs, ys, accuracy), colored by accuracy."""
    all_x = [x for xs, _, _ in series for x in xs]
    all_y = [y for _, ys, _ in series for y in ys]
    fig = SvgFigure(title, xlabel, ylabel)
    fig.set_limits(all_x, all_y)
    for xs, ys, acc in series:
        fig.polyline(xs, ys, accuracy_color(acc))
    return fig.render()


def render_density(curves, title: str, xlabel: str = "weight value",
                   ylabel: str = "density") -> str:
    """Overlaid per-trial histogram outlines and KDE curves.

    ``curves`` entries: dicts with hist_edges, hist, grid, kde (grid/kde
    may be None for degenerate estimates), and accuracy.
    """
    xs, ys = [], []
    for c in curves:
        xs.extend(c["hist_edges"])
        ys.extend(c["hist"])
        if c.get("kde") is not None:
            xs.extend(c["grid"])
            ys.extend(c["kde"])
    fig = SvgFigure(title, xlabel, ylabel)
    fig.set_limits(xs, ys)
    for c in curves:
        color = accuracy_color(c["accuracy"])
        fig.step_line(c["hist_edges"], c["hist"], color)
        if c.get("kde") is not None:
            fig.polyline(c["grid"], c["kde"], color)
    return fig.render()
