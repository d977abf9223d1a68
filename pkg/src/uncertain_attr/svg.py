"""Deterministic SVG output: tornado charts with uncertainty overlays, and line charts with error bands."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

WIDTH, ROW_H, LABEL_W, PAD = 520, 34, 130, 20
POS_COLOR, NEG_COLOR, UNC_COLOR = "#3b7dd8", "#d8553b", "#222222"
SERIES_COLORS = ("#3b7dd8", "#d8553b", "#2a9d5c", "#8a4fbf")


@dataclass
class TornadoPanel:
    """One explanation variant. Values are already on the display scale."""

    title: str
    values: np.ndarray
    ci_halfwidth: np.ndarray | None = None
    densities: Sequence | None = None  # per feature: (grid, density) or None


def _num(v: float) -> str:
    return f"{v:.2f}"


def panel_extent(panel: TornadoPanel) -> float:
    ext = np.abs(panel.values)
    if panel.ci_halfwidth is not None:
        ext = np.maximum(ext, np.abs(panel.values) + panel.ci_halfwidth)
    if panel.densities is not None:
        for d, gd in enumerate(panel.densities):
            if gd is not None:
                grid, dens = gd
                ext[d] = max(ext[d], float(np.max(np.abs(grid[dens >= 0.01 * dens.max()]))))
    return float(np.max(ext)) if ext.size else 0.0


def shared_extent(panels: Sequence[TornadoPanel]) -> float:
    """Common half-range so every variant is drawn on the same axis."""
    ext = max((panel_extent(p) for p in panels), default=0.0)
    return ext * 1.05 if ext > 0 else 1.0


def tornado_svg(panel: TornadoPanel, feature_names: Sequence[str], extent: float, unit: str = "subscore") -> str:
    """Horizontal bars from a zero axis: positive to the right, negative to the left."""
    n = len(feature_names)
    height = 2 * PAD + 24 + n * ROW_H + 24
    plot_w = WIDTH - LABEL_W - 2 * PAD
    x0 = LABEL_W + PAD + plot_w / 2
    scale = (plot_w / 2) / extent
    top = PAD + 24

    def sx(v):
        return x0 + v * scale

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" '
           f'viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="12">',
           f'<text x="{WIDTH / 2}" y="{PAD + 4}" text-anchor="middle" font-size="14">{escape(panel.title)}</text>']
    for d, name in enumerate(feature_names):
        v = float(panel.values[d])
        yc = top + d * ROW_H + ROW_H / 2
        left, w = (sx(v), sx(0) - sx(v)) if v < 0 else (sx(0), sx(v) - sx(0))
        color = NEG_COLOR if v < 0 else POS_COLOR
        out.append(f'<text x="{LABEL_W + PAD - 6}" y="{_num(yc + 4)}" text-anchor="end">{escape(name)}</text>')
        out.append(f'<rect class="bar" data-feature="{escape(name)}" data-value="{v:.4f}" x="{_num(left)}" '
                   f'y="{_num(yc - ROW_H * 0.3)}" width="{_num(w)}" height="{_num(ROW_H * 0.6)}" fill="{color}"/>')
        if panel.densities is not None:
            out.append(_violin(panel.densities[d], v, yc, sx, name))
        elif panel.ci_halfwidth is not None:
            h = float(panel.ci_halfwidth[d])
            out.append(f'<line class="ci" data-feature="{escape(name)}" x1="{_num(sx(v - h))}" y1="{_num(yc)}" '
                       f'x2="{_num(sx(v + h))}" y2="{_num(yc)}" stroke="{UNC_COLOR}" stroke-width="2"/>')
    axis_bottom = top + n * ROW_H
    out.append(f'<line class="axis" x1="{_num(x0)}" y1="{top}" x2="{_num(x0)}" y2="{axis_bottom}" stroke="#555"/>')
    for tick in (-extent, 0.0, extent):
        out.append(f'<text x="{_num(sx(tick))}" y="{axis_bottom + 16}" text-anchor="middle">{tick:.1f}</text>')
    out.append(f'<text x="{_num(x0)}" y="{axis_bottom + 32}" text-anchor="middle">{escape(unit)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _violin(gd, value, yc, sx, name) -> str:
    if gd is None:
        # no spread: a zero-length mark, visually identical to no overlay
        return (f'<line class="ci" data-feature="{escape(name)}" x1="{_num(sx(value))}" y1="{_num(yc)}" '
                f'x2="{_num(sx(value))}" y2="{_num(yc)}" stroke="{UNC_COLOR}"/>')
    grid, dens = gd
    keep = dens >= 0.01 * dens.max()
    grid, dens = grid[keep], dens[keep]
    half = dens / dens.max() * ROW_H * 0.45
    upper = [f"{_num(sx(g))},{_num(yc - h)}" for g, h in zip(grid, half)]
    lower = [f"{_num(sx(g))},{_num(yc + h)}" for g, h in zip(grid[::-1], half[::-1])]
    return (f'<path class="violin" data-feature="{escape(name)}" d="M{" L".join(upper + lower)} Z" '
            f'fill="none" stroke="{UNC_COLOR}" stroke-width="1.2"/>')


def line_chart_svg(title: str, x_label: str, y_label: str, series: Sequence[dict]) -> str:
    """Line chart; each series is ``{"name", "x", "y", "se"}`` and gets a shaded +/- se band."""
    w, h = 560, 360
    left, right, top, bottom = 60, 20, 40, 50
    xs = np.concatenate([np.asarray(s["x"], float) for s in series])
    x_lo, x_hi = float(xs.min()), float(xs.max())
    if x_hi == x_lo:
        x_hi = x_lo + 1.0

    def sx(v):
        return left + (v - x_lo) / (x_hi - x_lo) * (w - left - right)

    def sy(v):
        return h - bottom - np.clip(v, 0.0, 1.0) * (h - top - bottom)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" '
           f'font-family="sans-serif" font-size="12">',
           f'<text x="{w / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
           f'<line class="axis" x1="{left}" y1="{h - bottom}" x2="{w - right}" y2="{h - bottom}" stroke="#555"/>',
           f'<line class="axis" x1="{left}" y1="{top}" x2="{left}" y2="{h - bottom}" stroke="#555"/>']
    for t in (0.0, 0.5, 1.0):
        out.append(f'<text x="{left - 6}" y="{_num(sy(t) + 4)}" text-anchor="end">{t:.1f}</text>')
    for t in (x_lo, (x_lo + x_hi) / 2, x_hi):
        out.append(f'<text x="{_num(sx(t))}" y="{h - bottom + 16}" text-anchor="middle">{t:.3g}</text>')
    out.append(f'<text x="{w / 2}" y="{h - 10}" text-anchor="middle">{escape(x_label)}</text>')
    out.append(f'<text x="16" y="{h / 2}" text-anchor="middle" transform="rotate(-90 16 {h / 2})">'
               f'{escape(y_label)}</text>')
    for k, s in enumerate(series):
        color = SERIES_COLORS[k % len(SERIES_COLORS)]
        x, y, se = (np.asarray(s[key], float) for key in ("x", "y", "se"))
        band = [f"{_num(sx(a))},{_num(sy(b + e))}" for a, b, e in zip(x, y, se)]
        band += [f"{_num(sx(a))},{_num(sy(b - e))}" for a, b, e in zip(x[::-1], y[::-1], se[::-1])]
        out.append(f'<polygon class="band" points="{" ".join(band)}" fill="{color}" fill-opacity="0.2"/>')
        pts = " ".join(f"{_num(sx(a))},{_num(sy(b))}" for a, b in zip(x, y))
        out.append(f'<polyline class="series" data-name="{escape(s["name"])}" points="{pts}" '
                   f'fill="none" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{w - right - 4}" y="{top + 14 * (k + 1)}" text-anchor="end" fill="{color}">'
                   f'{escape(s["name"])}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
