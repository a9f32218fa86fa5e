"""Deterministic SVG trajectory plots: an x-y panel and a t-z panel."""
from __future__ import annotations

from typing import Sequence, Tuple

import numpy as np

PANEL_W, PANEL_H, MARGIN = 360, 300, 40
STYLES = {
    "tracked": 'fill="#d62728" stroke="none"',
    "completed": 'fill="#1f77b4" stroke="none"',
    "interpolated": 'fill="none" stroke="#7f7f7f"',
}
LINE_COLORS = {"tracked": "#d62728", "completed": "#1f77b4", "interpolated": "#7f7f7f"}


def _num(v: float) -> str:
    return f"{v:.2f}"


def _scale(lo: float, hi: float, a: float, b: float):
    if hi - lo < 1e-9:
        lo, hi = lo - 0.5, hi + 0.5
    return lambda v: a + (v - lo) / (hi - lo) * (b - a)


def _runs(samples):
    """Consecutive samples sharing a flag; neighbouring runs share their boundary point."""
    runs = []
    for i, (pt, flag) in enumerate(samples):
        if runs and runs[-1][1] == flag:
            runs[-1][0].append(pt)
        else:
            start = [samples[i - 1][0]] if i else []
            runs.append((start + [pt], flag))
    return runs


def _panel(x0: float, title: str, xs, ys, samples, gt_xy, xlabel: str, ylabel: str,
           markers: bool = True):
    out = [f'<g transform="translate({x0},0)">',
           f'<rect x="{MARGIN}" y="{MARGIN}" width="{PANEL_W - 2 * MARGIN}" '
           f'height="{PANEL_H - 2 * MARGIN}" fill="none" stroke="black"/>',
           f'<text x="{PANEL_W // 2}" y="{MARGIN - 12}" text-anchor="middle">{title}</text>',
           f'<text x="{PANEL_W // 2}" y="{PANEL_H - 8}" text-anchor="middle">{xlabel}</text>',
           f'<text x="12" y="{PANEL_H // 2}" text-anchor="middle" '
           f'transform="rotate(-90 12 {PANEL_H // 2})">{ylabel}</text>']
    if len(xs):
        fx = _scale(min(xs), max(xs), MARGIN, PANEL_W - MARGIN)
        fy = _scale(min(ys), max(ys), PANEL_H - MARGIN, MARGIN)
        if gt_xy:
            pts = " ".join(f"{_num(fx(a))},{_num(fy(b))}" for a, b in gt_xy)
            out.append(f'<polyline class="gt" points="{pts}" fill="none" stroke="#2ca02c"/>')
        if markers:
            for (a, b), flag in samples:
                out.append(f'<circle class="{flag}" cx="{_num(fx(a))}" cy="{_num(fy(b))}" r="2" '
                           f'{STYLES[flag]}/>')
        else:
            for pts, flag in _runs(samples):
                line = " ".join(f"{_num(fx(a))},{_num(fy(b))}" for a, b in pts)
                out.append(f'<polyline class="{flag}-curve" points="{line}" fill="none" '
                           f'stroke="{LINE_COLORS[flag]}"/>')
    out.append("</g>")
    return out


def emit_plot(traj: Sequence[Tuple[float, Sequence[float], str]],
              gt: Sequence[Tuple[float, Sequence[float]]] = ()) -> str:
    """SVG text with trajectory samples styled by flag and ground truth overlaid.

    The x-y panel carries one marker per sample; the t-z panel draws each
    run of equally flagged samples as a curve.

    ``traj`` holds ``(t, position, flag)``; ``gt`` holds ``(t, position)``.
    Equal input gives equal bytes.
    """
    traj = [(float(t), np.asarray(p, dtype=np.float64), f) for t, p, f in traj]
    gt = [(float(t), np.asarray(p, dtype=np.float64)) for t, p in gt]
    for _, _, f in traj:
        if f not in STYLES:
            raise ValueError(f"unknown trajectory flag {f!r}")
    width = 2 * PANEL_W
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{PANEL_H}" '
           f'viewBox="0 0 {width} {PANEL_H}" font-family="sans-serif" font-size="11">']
    allp = [p for _, p, _ in traj] + [p for _, p in gt]
    allt = [t for t, _, _ in traj] + [t for t, _ in gt]
    xy_x = [p[0] for p in allp]
    xy_y = [p[1] for p in allp]
    tz_z = [p[2] for p in allp]
    out += _panel(0, "x-y", xy_x, xy_y, [((p[0], p[1]), f) for _, p, f in traj],
                  [(p[0], p[1]) for _, p in gt], "x [m]", "y [m]")
    out += _panel(PANEL_W, "t-z", allt, tz_z, [((t, p[2]), f) for t, p, f in traj],
                  [(t, p[2]) for t, p in gt], "t [s]", "z [m]", markers=False)
    if not traj:
        out.append(f'<text class="warning" x="{width // 2}" y="{PANEL_H // 2}" text-anchor="middle" '
                   f'fill="#d62728">warning: empty trajectory</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
