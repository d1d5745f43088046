"""Self-contained SVG rendering for the package's figures.

Deterministic by construction: coordinates are formatted with fixed
precision and elements are emitted in input order, so a figure is a
pure function of the exported tables.  Three figure families:

* significance scatter: standardized (F, t^2) points colored by AR
  class, with the two critical-value curves and the conventional
  t cutoffs;
* histogram of log length ratios;
* filled heatmap grid of smoothed log length differences;
* power-curve panels for the simulation engine.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "significance_scatter",
    "loglength_histogram",
    "heatmap_figure",
    "power_panel",
]

_MARGIN = 54.0
_PLOT = 420.0
_SIZE = _PLOT + 2 * _MARGIN

_CLASS_COLORS = {"insignificant": "#222222", "5%": "#1f77b4", "1%": "#d62728"}


def _f(v: float) -> str:
    return f"{v:.2f}"


class _Canvas:
    def __init__(self, width=_SIZE, height=_SIZE):
        self.width = width
        self.height = height
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{int(width)}" '
            f'height="{int(height)}" viewBox="0 0 {int(width)} {int(height)}">',
            f'<rect x="0" y="0" width="{int(width)}" height="{int(height)}" fill="white"/>',
        ]

    def px(self, x):  # data in [0,1] -> pixels
        return _MARGIN + x * _PLOT

    def py(self, y):
        return self.height - _MARGIN - y * (self.height - 2 * _MARGIN)

    def line(self, x1, y1, x2, y2, stroke="#000", width=1.0, dash=None):
        d = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(
            f'<line x1="{_f(x1)}" y1="{_f(y1)}" x2="{_f(x2)}" y2="{_f(y2)}" '
            f'stroke="{stroke}" stroke-width="{_f(width)}"{d}/>'
        )

    def polyline(self, pts, stroke="#000", width=1.5, dash=None):
        if len(pts) < 2:
            return
        coords = " ".join(f"{_f(a)},{_f(b)}" for a, b in pts)
        d = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(
            f'<polyline points="{coords}" fill="none" stroke="{stroke}" '
            f'stroke-width="{_f(width)}"{d}/>'
        )

    def circle(self, x, y, r, fill):
        self.parts.append(
            f'<circle cx="{_f(x)}" cy="{_f(y)}" r="{_f(r)}" fill="{fill}" '
            f'fill-opacity="0.8"/>'
        )

    def rect(self, x, y, w, h, fill, stroke=None):
        s = f' stroke="{stroke}" stroke-width="0.5"' if stroke else ""
        self.parts.append(
            f'<rect x="{_f(x)}" y="{_f(y)}" width="{_f(w)}" height="{_f(h)}" fill="{fill}"{s}/>'
        )

    def text(self, x, y, s, size=11, anchor="middle", rotate=None):
        r = f' transform="rotate({rotate} {_f(x)} {_f(y)})"' if rotate is not None else ""
        self.parts.append(
            f'<text x="{_f(x)}" y="{_f(y)}" font-family="Helvetica,Arial,sans-serif" '
            f'font-size="{size}" text-anchor="{anchor}"{r}>{s}</text>'
        )

    def frame(self, xlabel, ylabel, title):
        m, p = _MARGIN, self.height - _MARGIN
        self.parts.append(
            f'<rect x="{_f(m)}" y="{_f(m)}" width="{_f(_PLOT)}" '
            f'height="{_f(self.height - 2 * m)}" fill="none" stroke="#333"/>'
        )
        for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
            x = self.px(frac)
            y = self.py(frac)
            self.line(x, p, x, p + 4, "#333")
            self.text(x, p + 16, f"{frac:g}", size=10)
            self.line(m - 4, y, m, y, "#333")
            self.text(m - 8, y + 3, f"{frac:g}", size=10, anchor="end")
        self.text(m + _PLOT / 2, self.height - 12, xlabel)
        self.text(16, m + (self.height - 2 * m) / 2, ylabel, rotate=-90)
        self.text(m + _PLOT / 2, m - 10, title, size=13)

    def render(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def significance_scatter(comparisons, cv5, cv1, title="Significance of t, AR and tF") -> str:
    """Scatter of standardized (F, t^2) with tF critical-value curves.

    Points are colored by the AR class; the solid black and gray curves
    are the 5% and 1% F-indexed critical values; dotted lines mark the
    conventional t cutoffs.
    """
    from .tftest import cv_values

    c = _Canvas()
    c.frame("(F/10)/(1+F/10)", "(t²/1.96²)/(1+t²/1.96²)", title)

    # conventional cutoffs: t^2 = 1.96^2 maps to y = 0.5
    for t2, color in ((3.841458820694124, "#555"), (6.634896601021214, "#999")):
        yv = (t2 / 3.841458820694124) / (1 + t2 / 3.841458820694124)
        c.line(c.px(0), c.py(yv), c.px(1), c.py(yv), color, 1.0, dash="4,4")

    for table, color in ((cv5, "#000000"), (cv1, "#888888")):
        fs = np.geomspace(table.f_threshold * 1.0005, 2000.0, 400)
        cv = cv_values(table, fs)
        pts = []
        for fv, cvv in zip(fs, cv):
            if not np.isfinite(cvv):
                continue
            x = (fv / 10) / (1 + fv / 10)
            t2 = cvv * cvv
            y = (t2 / 3.841458820694124) / (1 + t2 / 3.841458820694124)
            pts.append((c.px(x), c.py(y)))
        c.polyline(pts, stroke=color, width=1.8)

    for comp in comparisons:
        cls = comp.classes.get("AR")
        if cls is None:
            continue
        c.circle(c.px(comp.x), c.py(comp.y), 3.2, _CLASS_COLORS[cls])
    return c.render()


def loglength_histogram(report, title=None) -> str:
    """Bars of the binned log length ratios, one bar per 0.05 bin."""
    c = _Canvas()
    title = title or f"ln(length_tF / length_AR), {report.alpha:g} level"
    if report.n_included == 0:
        c.frame("ln length ratio", "frequency", title)
        c.text(_MARGIN + _PLOT / 2, _SIZE / 2, "no bounded pairs", size=13)
        return c.render()
    lo = float(report.bin_lo[0])
    hi = float(report.bin_lo[-1]) + 0.05
    span = max(hi - lo, 0.05)
    cmax = int(report.bin_counts.max())
    c.frame("ln length ratio", "frequency", title)
    # axis labels for the data range rather than [0,1]
    c.text(_MARGIN, _SIZE - _MARGIN + 30, f"{lo:.2f}", size=10, anchor="start")
    c.text(_MARGIN + _PLOT, _SIZE - _MARGIN + 30, f"{hi:.2f}", size=10, anchor="end")
    for blo, count in zip(report.bin_lo, report.bin_counts):
        if count == 0:
            continue
        x0 = (float(blo) - lo) / span
        w = 0.05 / span
        h = count / cmax
        c.rect(
            c.px(x0),
            c.py(h),
            w * _PLOT,
            h * (_SIZE - 2 * _MARGIN),
            fill="#4c72b0",
            stroke="#1d3557",
        )
    if lo < 0 < hi:
        xz = (0.0 - lo) / span
        c.line(c.px(xz), c.py(0), c.px(xz), c.py(1), "#d62728", 1.0, dash="3,3")
    return c.render()


def _diverging_color(v, vmax):
    """Blue (negative) to white (zero) to red (positive)."""
    if not np.isfinite(v):
        return None
    r = 0.0 if vmax == 0 else max(-1.0, min(1.0, v / vmax))
    if r >= 0:
        g = int(round(255 * (1 - r)))
        return f"rgb(255,{g},{g})"
    g = int(round(255 * (1 + r)))
    return f"rgb({g},{g},255)"


def heatmap_figure(grid, title=None) -> str:
    """Filled grid of smoothed log length differences; missing cells stay white."""
    c = _Canvas()
    title = title or f"ln(length_tF / length_AR) heatmap, {grid.alpha:g} level"
    vals = grid.values
    finite = vals[np.isfinite(vals)]
    vmax = float(np.abs(finite).max()) if finite.size else 1.0
    nx, ny = len(grid.x_centers), len(grid.y_centers)
    cw = _PLOT / nx
    ch = (_SIZE - 2 * _MARGIN) / ny
    for j in range(ny):
        for i in range(nx):
            color = _diverging_color(vals[j, i], vmax)
            if color is None:
                continue
            x = c.px(grid.x_centers[i]) - cw / 2
            y = c.py(grid.y_centers[j]) - ch / 2
            c.rect(x, y, cw, ch, fill=color)
    c.frame("|rho|", "(F/10)/(1+F/10)", title)
    return c.render()


def power_panel(curve, alpha) -> str:
    """Rejection-rate curves of the three procedures over the deviations."""
    c = _Canvas()
    c.frame(
        "deviation beta - beta0",
        "rejection rate",
        f"f0={curve.f0:g}, rho={curve.rho:g} ({alpha:g} level)",
    )
    devs = np.asarray(curve.deviations)
    lo, hi = float(devs.min()), float(devs.max())
    span = max(hi - lo, 1e-9)
    c.text(_MARGIN, _SIZE - _MARGIN + 30, f"{lo:.1f}", size=10, anchor="start")
    c.text(_MARGIN + _PLOT, _SIZE - _MARGIN + 30, f"{hi:.1f}", size=10, anchor="end")
    styles = {"AR": ("#d62728", None), "tF": ("#1f77b4", "6,3"), "t": ("#555555", "2,3")}
    for proc, (color, dash) in styles.items():
        pts = [
            (c.px((d - lo) / span), c.py(min(1.0, max(0.0, r))))
            for d, r in zip(devs, curve.rates[proc])
        ]
        c.polyline(pts, stroke=color, width=1.8, dash=dash)
    yv = c.py(alpha)
    c.line(c.px(0), yv, c.px(1), yv, "#aaaaaa", 0.8, dash="2,2")
    lx = _MARGIN + 10
    for k, (proc, (color, _d)) in enumerate(styles.items()):
        c.rect(lx, _MARGIN + 10 + 16 * k, 10, 10, fill=color)
        c.text(lx + 16, _MARGIN + 19 + 16 * k, proc, size=10, anchor="start")
    return c.render()
