"""Minimal SVG charts: polyline overlays and box plots.

The experiment harness only needs static batch figures, so these are
hand-rolled polyline/rect primitives rather than a plotting dependency.
No timestamps or other run-varying metadata are embedded: the same data
renders to the same bytes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

__all__ = ["Series", "line_chart", "box_chart", "panel_chart"]

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#7f7f7f", "#9467bd", "#ff7f0e", "#8c564b"]

_MARGIN_L, _MARGIN_R, _MARGIN_T, _MARGIN_B = 64, 16, 34, 46


@dataclass
class Series:
    name: str
    x: Sequence[float]
    y: Sequence[float]
    color: str | None = None
    dashed: bool = False


def _nice_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if not math.isfinite(lo) or not math.isfinite(hi):
        return []
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / max(n, 1)
    mag = 10 ** math.floor(math.log10(raw))
    for mult in (1, 2, 2.5, 5, 10):
        if raw <= mult * mag:
            step = mult * mag
            break
    start = math.ceil(lo / step) * step
    ticks = []
    t = start
    while t <= hi + 1e-9 * step:
        ticks.append(round(t, 12))
        t += step
    return ticks


def _fmt(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 1e4 or abs(v) < 1e-3:
        return f"{v:.1e}"
    return f"{v:.6g}"


class _Canvas:
    def __init__(self, width: int, height: int):
        self.width, self.height = width, height
        self.parts: list[str] = []

    def add(self, fragment: str) -> None:
        self.parts.append(fragment)

    def render(self, manifest_hash: str | None) -> str:
        head = (
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" '
            f'height="{self.height}" viewBox="0 0 {self.width} {self.height}" '
            'font-family="Helvetica, Arial, sans-serif" font-size="11">\n'
        )
        comment = f"<!-- manifest: {manifest_hash} -->\n" if manifest_hash else ""
        bg = f'<rect width="{self.width}" height="{self.height}" fill="white"/>\n'
        return head + comment + bg + "\n".join(self.parts) + "\n</svg>\n"


def _axes(cv: _Canvas, x0, y0, w, h, xlim, ylim, title, xlabel, ylabel,
          xticklabels: Sequence[tuple[float, str]] | None = None):
    """Draw the axes box with ticks; return data->pixel transforms."""
    xlo, xhi = xlim
    ylo, yhi = ylim
    if xhi <= xlo:
        xhi = xlo + 1.0
    if yhi <= ylo:
        yhi = ylo + 1.0

    def tx(v):
        return x0 + (v - xlo) / (xhi - xlo) * w

    def ty(v):
        return y0 + h - (v - ylo) / (yhi - ylo) * h

    cv.add(f'<rect x="{x0}" y="{y0}" width="{w}" height="{h}" fill="none" stroke="#333"/>')
    if title:
        cv.add(
            f'<text x="{x0 + w / 2:.1f}" y="{y0 - 12}" text-anchor="middle" '
            f'font-size="13">{title}</text>'
        )
    if xticklabels is None:
        xticklabels = [(t, _fmt(t)) for t in _nice_ticks(xlo, xhi)]
    for v, label in xticklabels:
        px = tx(v)
        cv.add(f'<line x1="{px:.1f}" y1="{y0 + h}" x2="{px:.1f}" y2="{y0 + h + 4}" stroke="#333"/>')
        cv.add(f'<text x="{px:.1f}" y="{y0 + h + 16}" text-anchor="middle">{label}</text>')
    for v in _nice_ticks(ylo, yhi):
        py = ty(v)
        cv.add(f'<line x1="{x0 - 4}" y1="{py:.1f}" x2="{x0}" y2="{py:.1f}" stroke="#333"/>')
        cv.add(f'<text x="{x0 - 7}" y="{py + 3:.1f}" text-anchor="end">{_fmt(v)}</text>')
        cv.add(
            f'<line x1="{x0}" y1="{py:.1f}" x2="{x0 + w}" y2="{py:.1f}" '
            'stroke="#ddd" stroke-width="0.5"/>'
        )
    if xlabel:
        cv.add(
            f'<text x="{x0 + w / 2:.1f}" y="{y0 + h + 34}" text-anchor="middle">{xlabel}</text>'
        )
    if ylabel:
        px, py = x0 - 48, y0 + h / 2
        cv.add(
            f'<text x="{px}" y="{py:.1f}" text-anchor="middle" '
            f'transform="rotate(-90 {px} {py:.1f})">{ylabel}</text>'
        )
    return tx, ty


def _data_limits(series: Sequence[Series]) -> tuple[tuple[float, float], tuple[float, float]]:
    xs = [v for s in series for v in s.x if math.isfinite(v)]
    ys = [v for s in series for v in s.y if math.isfinite(v)]
    if not xs or not ys:
        return (0.0, 1.0), (0.0, 1.0)
    xpad = 0.02 * (max(xs) - min(xs) or 1.0)
    ypad = 0.05 * (max(ys) - min(ys) or 1.0)
    return (min(xs) - xpad, max(xs) + xpad), (min(ys) - ypad, max(ys) + ypad)


def _draw_series(cv: _Canvas, series: Sequence[Series], tx, ty, legend_x, legend_y):
    for idx, s in enumerate(series):
        color = s.color or PALETTE[idx % len(PALETTE)]
        points = " ".join(
            f"{tx(x):.2f},{ty(y):.2f}"
            for x, y in zip(s.x, s.y)
            if math.isfinite(x) and math.isfinite(y)
        )
        dash = ' stroke-dasharray="5,3"' if s.dashed else ""
        cv.add(
            f'<polyline points="{points}" fill="none" stroke="{color}" '
            f'stroke-width="1.5"{dash}/>'
        )
        ly = legend_y + 14 * idx
        cv.add(f'<line x1="{legend_x}" y1="{ly}" x2="{legend_x + 18}" y2="{ly}" '
               f'stroke="{color}" stroke-width="2"{dash}/>')
        cv.add(f'<text x="{legend_x + 22}" y="{ly + 3}">{s.name}</text>')


def line_chart(
    series: Sequence[Series],
    title: str = "",
    xlabel: str = "",
    ylabel: str = "",
    width: int = 640,
    height: int = 420,
    manifest_hash: str | None = None,
) -> str:
    cv = _Canvas(width, height)
    w = width - _MARGIN_L - _MARGIN_R
    h = height - _MARGIN_T - _MARGIN_B
    xlim, ylim = _data_limits(series)
    tx, ty = _axes(cv, _MARGIN_L, _MARGIN_T, w, h, xlim, ylim, title, xlabel, ylabel)
    _draw_series(cv, series, tx, ty, _MARGIN_L + w - 150, _MARGIN_T + 14)
    return cv.render(manifest_hash)


def panel_chart(
    panels: Sequence[tuple[str, str, str, Sequence[Series]]],
    width_per_panel: int = 420,
    height: int = 380,
    manifest_hash: str | None = None,
) -> str:
    """Side-by-side line panels: (title, xlabel, ylabel, series) each."""
    width = width_per_panel * len(panels)
    cv = _Canvas(width, height)
    w = width_per_panel - _MARGIN_L - _MARGIN_R
    h = height - _MARGIN_T - _MARGIN_B
    for i, (title, xlabel, ylabel, series) in enumerate(panels):
        x0 = _MARGIN_L + i * width_per_panel
        xlim, ylim = _data_limits(series)
        tx, ty = _axes(cv, x0, _MARGIN_T, w, h, xlim, ylim, title, xlabel, ylabel)
        _draw_series(cv, series, tx, ty, x0 + w - 140, _MARGIN_T + 14)
    return cv.render(manifest_hash)


def _quantile(sorted_vals: list[float], q: float) -> float:
    n = len(sorted_vals)
    if n == 1:
        return sorted_vals[0]
    pos = q * (n - 1)
    lo = int(math.floor(pos))
    hi = min(lo + 1, n - 1)
    frac = pos - lo
    return sorted_vals[lo] * (1 - frac) + sorted_vals[hi] * frac


def box_chart(
    groups: Sequence[tuple[str, Sequence[float]]],
    title: str = "",
    ylabel: str = "",
    width: int = 640,
    height: int = 420,
    manifest_hash: str | None = None,
) -> str:
    """One box-and-whiskers per labelled group (1.5 IQR whiskers)."""
    cv = _Canvas(width, height)
    w = width - _MARGIN_L - _MARGIN_R
    h = height - _MARGIN_T - _MARGIN_B
    all_vals = [v for _, vals in groups for v in vals if math.isfinite(v)]
    if not all_vals:
        all_vals = [0.0, 1.0]
    ylo, yhi = min(all_vals), max(all_vals)
    pad = 0.05 * ((yhi - ylo) or 1.0)
    n = len(groups)
    ticks = [(i + 0.5, label) for i, (label, _) in enumerate(groups)]
    tx, ty = _axes(
        cv, _MARGIN_L, _MARGIN_T, w, h, (0.0, float(n)), (ylo - pad, yhi + pad),
        title, "", ylabel, xticklabels=ticks,
    )
    half = 0.30
    for i, (label, vals) in enumerate(groups):
        vals = sorted(v for v in vals if math.isfinite(v))
        if not vals:
            continue
        color = PALETTE[i % len(PALETTE)]
        q1, q2, q3 = (_quantile(vals, q) for q in (0.25, 0.5, 0.75))
        iqr = q3 - q1
        lo_w = min((v for v in vals if v >= q1 - 1.5 * iqr), default=vals[0])
        hi_w = max((v for v in vals if v <= q3 + 1.5 * iqr), default=vals[-1])
        cx = i + 0.5
        x1, x2 = tx(cx - half), tx(cx + half)
        cv.add(
            f'<rect x="{x1:.1f}" y="{ty(q3):.1f}" width="{x2 - x1:.1f}" '
            f'height="{ty(q1) - ty(q3):.1f}" fill="{color}" fill-opacity="0.25" '
            f'stroke="{color}"/>'
        )
        cv.add(f'<line x1="{x1:.1f}" y1="{ty(q2):.1f}" x2="{x2:.1f}" y2="{ty(q2):.1f}" '
               f'stroke="{color}" stroke-width="2"/>')
        for wv, q in ((lo_w, q1), (hi_w, q3)):
            cv.add(f'<line x1="{tx(cx):.1f}" y1="{ty(q):.1f}" x2="{tx(cx):.1f}" '
                   f'y2="{ty(wv):.1f}" stroke="{color}"/>')
            cv.add(f'<line x1="{tx(cx - half / 2):.1f}" y1="{ty(wv):.1f}" '
                   f'x2="{tx(cx + half / 2):.1f}" y2="{ty(wv):.1f}" stroke="{color}"/>')
        for v in vals:
            if v < lo_w or v > hi_w:
                cv.add(f'<circle cx="{tx(cx):.1f}" cy="{ty(v):.1f}" r="2" '
                       f'fill="none" stroke="{color}"/>')
    return cv.render(manifest_hash)


def write_svg(path: str | Path, content: str) -> None:
    Path(path).write_text(content)
