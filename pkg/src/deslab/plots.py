"""Static SVG plots of training curves and confusion matrices.

The SVG is written by hand so the bytes depend only on the data.
"""

from __future__ import annotations

import csv
import io
from typing import Optional, Sequence

import numpy as np

from .errors import PlotError
from .metrics import UNDEFINED

WIDTH, HEIGHT = 640, 400
MARGIN = dict(left=60, right=150, top=40, bottom=50)
PALETTE = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
]

# shorthand selections understood by ``select_series``
ALIASES = {
    "loss": ["train_cce", "val_cce"],
    "ac": ["val_ac"],
    "precision": [f"p_{i}" for i in range(8)],
    "recall": [f"r_{i}" for i in range(8)],
    "pr": [f"p_{i}" for i in range(8)] + [f"r_{i}" for i in range(8)],
}


def read_curves(text: str) -> dict:
    """``{column: {fold: [(epoch, value), ...]}}`` from a curves CSV; undefined cells are skipped."""
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows or "fold" not in rows[0] or "epoch" not in rows[0]:
        raise PlotError("curves file needs fold and epoch columns")
    out = {}
    for col in rows[0]:
        if col in ("fold", "epoch"):
            continue
        per_fold = {}
        for r in rows:
            v = r[col]
            if v in ("", UNDEFINED):
                continue
            per_fold.setdefault(int(r["fold"]), []).append((int(r["epoch"]), float(v)))
        out[col] = per_fold
    return out


def select_series(curves: dict, names: Sequence[str]) -> list:
    chosen = []
    for name in names:
        for col in ALIASES.get(name, [name]):
            if col not in curves:
                available = ", ".join(list(curves) + sorted(ALIASES))
                raise PlotError(f"unknown series {col!r}; available: {available}")
            if col not in chosen:
                chosen.append(col)
    return chosen


def _ticks(lo: float, hi: float, count: int = 5) -> list:
    if hi <= lo:
        hi = lo + 1.0
    return [lo + (hi - lo) * k / (count - 1) for k in range(count)]


def _header(title: str) -> list:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.1f}" y="20" text-anchor="middle" font-size="14">{_escape(title)}</text>',
    ]


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def line_plot(curves: dict, names: Sequence[str], title: str = "", ylabel: str = "") -> str:
    """One polyline per (series, fold), epochs on the x axis."""
    cols = select_series(curves, names)
    lines = [(col, fold, pts) for col in cols for fold, pts in sorted(curves[col].items()) if pts]
    if not lines:
        raise PlotError("selected series contain no defined values")
    xs = [x for _, _, pts in lines for x, _ in pts]
    ys = [y for _, _, pts in lines for _, y in pts]
    x0, x1 = min(xs), max(max(xs), min(xs) + 1)
    y0, y1 = min(0.0, min(ys)), max(ys)
    if y1 <= y0:
        y1 = y0 + 1.0
    left, top = MARGIN["left"], MARGIN["top"]
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def sx(x):
        return left + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return top + ph - (y - y0) / (y1 - y0) * ph

    out = _header(title)
    out.append(f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    for t in _ticks(y0, y1):
        out.append(f'<line x1="{left - 4}" y1="{sy(t):.2f}" x2="{left}" y2="{sy(t):.2f}" stroke="black"/>')
        out.append(f'<text x="{left - 6}" y="{sy(t) + 4:.2f}" text-anchor="end">{t:.2f}</text>')
    step = max(1, int(round((x1 - x0) / 10)))
    for t in range(int(x0), int(x1) + 1, step):
        out.append(f'<line x1="{sx(t):.2f}" y1="{top + ph}" x2="{sx(t):.2f}" y2="{top + ph + 4}" stroke="black"/>')
        out.append(f'<text x="{sx(t):.2f}" y="{top + ph + 16}" text-anchor="middle">{t}</text>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{HEIGHT - 10}" text-anchor="middle">epoch</text>')
    if ylabel:
        out.append(
            f'<text x="14" y="{top + ph / 2:.1f}" text-anchor="middle" '
            f'transform="rotate(-90 14 {top + ph / 2:.1f})">{_escape(ylabel)}</text>'
        )
    for k, (col, fold, pts) in enumerate(lines):
        color = PALETTE[k % len(PALETTE)]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}" '
                   f'data-series="{col}" data-fold="{fold}"/>')
        ly = top + 12 + 14 * k
        out.append(f'<line x1="{left + pw + 10}" y1="{ly - 4}" x2="{left + pw + 28}" y2="{ly - 4}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 32}" y="{ly}">{col} fold {fold}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def heatmap(matrix: np.ndarray, title: str = "", labels: Optional[Sequence[str]] = None) -> str:
    """Grey-scale cells annotated to 2 decimals; rows are true classes."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise PlotError(f"heatmap needs a square matrix, got shape {m.shape}")
    n = m.shape[0]
    names = list(labels) if labels else [f"C{i}" for i in range(n)]
    size = min(WIDTH - 140, HEIGHT - 100) / n
    left, top = 90, 50
    out = _header(title)
    vmax = max(float(m.max()), 1e-12)
    for i in range(n):
        out.append(f'<text x="{left - 6}" y="{top + (i + 0.5) * size + 4:.2f}" text-anchor="end">{names[i]}</text>')
        out.append(f'<text x="{left + (i + 0.5) * size:.2f}" y="{top - 6}" text-anchor="middle">{names[i]}</text>')
        for j in range(n):
            v = m[i, j]
            shade = int(round(255 * (1 - v / vmax)))
            ink = "white" if shade < 128 else "black"
            x, y = left + j * size, top + i * size
            out.append(f'<rect x="{x:.2f}" y="{y:.2f}" width="{size:.2f}" height="{size:.2f}" '
                       f'fill="rgb({shade},{shade},{shade})" stroke="#999"/>')
            out.append(f'<text x="{x + size / 2:.2f}" y="{y + size / 2 + 4:.2f}" text-anchor="middle" '
                       f'fill="{ink}">{v:.2f}</text>')
    out.append(f'<text x="{left + n * size / 2:.1f}" y="{top + n * size + 20:.1f}" text-anchor="middle">predicted</text>')
    out.append(f'<text x="20" y="{top + n * size / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 20 {top + n * size / 2:.1f})">true</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
