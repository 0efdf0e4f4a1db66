"""Dependency-free SVG output: maze/trajectory drawings and line charts."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from dcil.env import MazeMap

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _esc(text: str) -> str:
    return (str(text).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
            .replace('"', "&quot;"))


def maze_svg(maze: MazeMap, paths: Sequence[tuple[str, np.ndarray, str]] = (),
             goals: np.ndarray | None = None, goal_radius: float = 0.2,
             px_per_unit: float = 80.0) -> str:
    """Draw walls, zones, optional goal disks and polylines ``(label, xy, colour)``."""
    xmin, ymin, xmax, ymax = maze.bounds
    w = (xmax - xmin) * px_per_unit
    h = (ymax - ymin) * px_per_unit

    def px(x, y):
        return (x - xmin) * px_per_unit, (ymax - y) * px_per_unit

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0f}" height="{h + 24:.0f}" '
           f'viewBox="0 0 {w:.1f} {h + 24:.1f}">',
           f'<rect x="0" y="0" width="{w:.1f}" height="{h:.1f}" fill="white" stroke="black"/>']
    for z in maze.zones:
        x0, y1 = px(z.xmin, z.ymin)
        x1, y0 = px(z.xmax, z.ymax)
        out.append(f'<rect x="{x0:.1f}" y="{y0:.1f}" width="{x1 - x0:.1f}" '
                   f'height="{y1 - y0:.1f}" fill="none" stroke="#dddddd" stroke-width="0.5"/>')
    for rxmin, rymin, rxmax, rymax in maze.wall_rects:
        x0, y1 = px(rxmin, rymin)
        x1, y0 = px(rxmax, rymax)
        out.append(f'<rect x="{x0:.1f}" y="{y0:.1f}" width="{x1 - x0:.1f}" '
                   f'height="{y1 - y0:.1f}" fill="#444444"/>')
    if goals is not None:
        for gx, gy in np.asarray(goals).reshape(-1, 2):
            cx, cy = px(gx, gy)
            out.append(f'<circle cx="{cx:.1f}" cy="{cy:.1f}" r="{goal_radius * px_per_unit:.1f}" '
                       f'fill="#ff69b4" fill-opacity="0.35"/>')
    for k, (label, xy, colour) in enumerate(paths):
        xy = np.asarray(xy)
        if xy.shape[0] == 0:
            continue
        pts = " ".join("%.1f,%.1f" % px(x, y) for x, y in xy[:, :2])
        out.append(f'<polyline points="{pts}" fill="none" stroke="{colour}" stroke-width="1.5"/>')
        out.append(f'<text x="{6 + 140 * k}" y="{h + 17:.0f}" font-size="12" '
                   f'fill="{colour}">{_esc(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def line_chart_svg(x: Sequence[float], series: dict[str, Sequence[float]], title: str = "",
                   xlabel: str = "", ylabel: str = "", ylim: tuple[float, float] = (0.0, 1.0),
                   width: int = 640, height: int = 400) -> str:
    x = np.asarray(x, dtype=float)
    left, right, top, bottom = 60, 150, 30, 50
    pw, ph = width - left - right, height - top - bottom
    x_lo = float(x.min()) if x.size else 0.0
    x_hi = float(x.max()) if x.size else 1.0
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    y_lo, y_hi = ylim

    def px(xv, yv):
        return (left + (xv - x_lo) / (x_hi - x_lo) * pw,
                top + (1.0 - (yv - y_lo) / (y_hi - y_lo)) * ph)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
           f'<text x="{left + pw / 2:.0f}" y="18" font-size="14" text-anchor="middle">'
           f'{_esc(title)}</text>',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for k in range(6):
        yv = y_lo + (y_hi - y_lo) * k / 5
        _, yy = px(x_lo, yv)
        out.append(f'<line x1="{left}" y1="{yy:.1f}" x2="{left + pw}" y2="{yy:.1f}" '
                   f'stroke="#eeeeee"/>')
        out.append(f'<text x="{left - 6}" y="{yy + 4:.1f}" font-size="11" '
                   f'text-anchor="end">{yv:.2g}</text>')
        xv = x_lo + (x_hi - x_lo) * k / 5
        xx, _ = px(xv, y_lo)
        out.append(f'<text x="{xx:.1f}" y="{top + ph + 16}" font-size="11" '
                   f'text-anchor="middle">{xv:.6g}</text>')
    out.append(f'<text x="{left + pw / 2:.0f}" y="{height - 10}" font-size="12" '
               f'text-anchor="middle">{_esc(xlabel)}</text>')
    out.append(f'<text x="14" y="{top + ph / 2:.0f}" font-size="12" text-anchor="middle" '
               f'transform="rotate(-90 14 {top + ph / 2:.0f})">{_esc(ylabel)}</text>')
    for k, (name, ys) in enumerate(series.items()):
        colour = PALETTE[k % len(PALETTE)]
        ys = np.asarray(ys, dtype=float)
        pts = " ".join("%.1f,%.1f" % px(a, b) for a, b in zip(x, ys) if np.isfinite(b))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{colour}" stroke-width="2"/>')
        ly = top + 16 + 18 * k
        out.append(f'<line x1="{left + pw + 10}" y1="{ly - 4}" x2="{left + pw + 30}" '
                   f'y2="{ly - 4}" stroke="{colour}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 36}" y="{ly}" font-size="12">{_esc(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
