"""Minimal deterministic SVG rendering for training curves, CV bands and
beam envelopes.  Output depends only on the data (no timestamps, fixed
number formatting) so reruns are byte-identical."""

from __future__ import annotations

import csv
import math
from xml.sax.saxutils import escape

import numpy as np

from .agents.analysis import BANDS, NOT_APPLICABLE, CvRow

WIDTH, HEIGHT = 720, 420
MARGIN = dict(left=70, right=20, top=40, bottom=55)
BAND_COLORS = {
    BANDS[0]: "#1b7837",
    BANDS[1]: "#a6dba0",
    BANDS[2]: "#f4a582",
    BANDS[3]: "#b2182b",
    NOT_APPLICABLE: "#bbbbbb",
}


def _f(v: float) -> str:
    return f"{v:.2f}"


def nice_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise ValueError("non-finite axis range")
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / max(n, 1)
    mag = 10.0 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw)
    start = math.ceil(lo / step - 1e-9) * step
    ticks = []
    v = start
    while v <= hi + step * 1e-9:
        ticks.append(round(v, 12))
        v += step
    return ticks


def _label(v: float) -> str:
    return f"{v:.4g}"


class _Canvas:
    def __init__(self, title: str, xlabel: str, ylabel: str, xlim, ylim, width=WIDTH, height=HEIGHT):
        self.w, self.h = width, height
        self.x0, self.x1 = MARGIN["left"], width - MARGIN["right"]
        self.y0, self.y1 = height - MARGIN["bottom"], MARGIN["top"]
        self.xlim, self.ylim = xlim, ylim
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
            f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
            f'<text x="{width / 2:.1f}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>',
        ]
        self._axes(xlabel, ylabel)

    def sx(self, x: float) -> float:
        a, b = self.xlim
        return self.x0 + (x - a) / (b - a) * (self.x1 - self.x0)

    def sy(self, y: float) -> float:
        a, b = self.ylim
        return self.y0 - (y - a) / (b - a) * (self.y0 - self.y1)

    def _axes(self, xlabel, ylabel):
        p = self.parts
        p.append(
            f'<path d="M{self.x0} {self.y1} L{self.x0} {self.y0} L{self.x1} {self.y0}" '
            f'stroke="black" fill="none"/>'
        )
        for t in nice_ticks(*self.xlim):
            if self.xlim[0] - 1e-12 <= t <= self.xlim[1] + 1e-12:
                x = _f(self.sx(t))
                p.append(f'<line x1="{x}" y1="{self.y0}" x2="{x}" y2="{self.y0 + 5}" stroke="black"/>')
                p.append(f'<text x="{x}" y="{self.y0 + 18}" text-anchor="middle">{_label(t)}</text>')
        for t in nice_ticks(*self.ylim):
            if self.ylim[0] - 1e-12 <= t <= self.ylim[1] + 1e-12:
                y = _f(self.sy(t))
                p.append(f'<line x1="{self.x0 - 5}" y1="{y}" x2="{self.x0}" y2="{y}" stroke="black"/>')
                p.append(f'<text x="{self.x0 - 8}" y="{y}" text-anchor="end" dy="4">{_label(t)}</text>')
        p.append(
            f'<text x="{(self.x0 + self.x1) / 2:.1f}" y="{self.h - 15}" text-anchor="middle">{escape(xlabel)}</text>'
        )
        cy = (self.y0 + self.y1) / 2
        p.append(
            f'<text x="18" y="{cy:.1f}" text-anchor="middle" transform="rotate(-90 18 {cy:.1f})">'
            f"{escape(ylabel)}</text>"
        )

    def polyline(self, xs, ys, color, width=1.5, dash=None):
        pts = " ".join(f"{_f(self.sx(x))},{_f(self.sy(y))}" for x, y in zip(xs, ys))
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="{width}"{extra}/>'
        )

    def markers(self, xs, ys, color, r=1.8):
        for x, y in zip(xs, ys):
            self.parts.append(f'<circle cx="{_f(self.sx(x))}" cy="{_f(self.sy(y))}" r="{r}" fill="{color}"/>')

    def legend(self, entries):
        y = self.y1 + 8
        for label, color, dash in entries:
            extra = f' stroke-dasharray="{dash}"' if dash else ""
            x = self.x1 - 170
            self.parts.append(
                f'<line x1="{x}" y1="{y}" x2="{x + 25}" y2="{y}" stroke="{color}" stroke-width="2"{extra}/>'
            )
            self.parts.append(f'<text x="{x + 32}" y="{y + 4}">{escape(label)}</text>')
            y += 16

    def render(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def _span(values, pad=0.05):
    lo, hi = float(np.min(values)), float(np.max(values))
    if hi == lo:
        return lo - 0.5, hi + 0.5
    d = (hi - lo) * pad
    return lo - d, hi + d


def training_curve_svg(episodes, transmission, cummax, title="Training curve") -> str:
    """Evaluation-episode transmission (points) and its running maximum
    (dashed red)."""
    episodes = np.asarray(episodes, dtype=float)
    if episodes.size == 0:
        raise ValueError("no evaluation episodes to plot")
    c = _Canvas(title, "episode", "transmission", _span(episodes, 0.02), (0.0, 1.05))
    c.polyline(episodes, transmission, "#4393c3", width=1.0)
    c.markers(episodes, transmission, "#2166ac")
    c.polyline(episodes, cummax, "#d6604d", width=2.0, dash="6,4")
    c.legend([("transmission", "#2166ac", None), ("cumulative max", "#d6604d", "6,4")])
    return c.render()


def cv_svg(rows: list[CvRow], title="Parameter convergence (CV)") -> str:
    """Horizontal bar per parameter, coloured by CV band; n/a rows grey."""
    if not rows:
        raise ValueError("no CV rows")
    shown = [r.cv for r in rows if r.cv is not None]
    top = max([60.0] + [min(v, 200.0) for v in shown])
    bar_h = 18
    height = MARGIN["top"] + MARGIN["bottom"] + bar_h * len(rows) + 40
    left = 120
    width = WIDTH
    scale = (width - left - MARGIN["right"]) / top
    p = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>',
    ]
    y = MARGIN["top"]
    for r in rows:
        color = BAND_COLORS[r.band]
        length = 0.0 if r.cv is None else min(r.cv, top) * scale
        label = NOT_APPLICABLE if r.cv is None else f"{r.cv:.1f}%"
        p.append(f'<text x="{left - 8}" y="{y + 13}" text-anchor="end">{escape(r.parameter)}</text>')
        p.append(f'<rect x="{left}" y="{y + 2}" width="{_f(max(length, 2.0))}" height="{bar_h - 4}" fill="{color}"/>')
        p.append(f'<text x="{_f(left + max(length, 2.0) + 5)}" y="{y + 13}">{label}</text>')
        y += bar_h
    for t in (10.0, 25.0, 50.0):
        x = _f(left + t * scale)
        p.append(
            f'<line x1="{x}" y1="{MARGIN["top"]}" x2="{x}" y2="{y}" stroke="#666" stroke-dasharray="3,3"/>'
        )
        p.append(f'<text x="{x}" y="{y + 14}" text-anchor="middle">{t:g}%</text>')
    ly = y + 34
    lx = left
    for band in (*BANDS, NOT_APPLICABLE):
        p.append(f'<rect x="{lx}" y="{ly - 10}" width="12" height="12" fill="{BAND_COLORS[band]}"/>')
        p.append(f'<text x="{lx + 16}" y="{ly}">{escape(band)}</text>')
        lx += 95
    p.append("</svg>")
    return "\n".join(p) + "\n"


def envelope_svg(s, sigma_x, sigma_y, apertures, title="Beam envelope (2 sigma)") -> str:
    """2*std of x and y against s, in millimetres.  ``apertures`` is a list
    of ``(s, ax, ay)`` drawn as walls from the semi-axis upward."""
    s = np.asarray(s, dtype=float)
    if s.size == 0:
        raise ValueError("no profile rows")
    ex = 2e3 * np.asarray(sigma_x, dtype=float)
    ey = 2e3 * np.asarray(sigma_y, dtype=float)
    ymax = max([float(ex.max()), float(ey.max())] + [1e3 * max(a[1], a[2]) for a in apertures]) * 1.15
    c = _Canvas(title, "s (m)", "2 sigma (mm)", (0.0, max(float(s.max()), 1e-9)), (0.0, ymax))
    c.polyline(s, ex, "#2166ac", width=2.0)
    c.polyline(s, ey, "#b2182b", width=2.0, dash="5,3")
    for pos, ax, ay in apertures:
        x = _f(c.sx(pos))
        for half, color in ((ax, "#2166ac"), (ay, "#b2182b")):
            y = _f(c.sy(1e3 * half))
            c.parts.append(
                f'<line x1="{x}" y1="{y}" x2="{x}" y2="{_f(c.sy(ymax))}" stroke="{color}" '
                f'stroke-width="4" stroke-opacity="0.5"/>'
            )
    c.legend([("2 sigma x", "#2166ac", None), ("2 sigma y", "#b2182b", "5,3")])
    return c.render()


PROFILE_COLUMNS = [
    "pos",
    "element",
    "s",
    "n_survivors",
    "mean_x",
    "std_x",
    "mean_xp",
    "std_xp",
    "mean_y",
    "std_y",
    "mean_yp",
    "std_yp",
]


def write_profile_csv(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=PROFILE_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def read_profile_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != PROFILE_COLUMNS:
            raise ValueError(f"{path}: not a per-watch profile CSV")
        rows = []
        for r in reader:
            row = {k: float(v) for k, v in r.items() if k not in ("pos", "element", "n_survivors")}
            row.update(pos=int(r["pos"]), element=r["element"], n_survivors=int(r["n_survivors"]))
            rows.append(row)
    if not rows:
        raise ValueError(f"{path}: profile CSV has no rows")
    return rows
