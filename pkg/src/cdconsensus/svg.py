"""Minimal deterministic SVG line and stem plots (no plotting library needed)."""
from __future__ import annotations

import math
from pathlib import Path
from typing import Optional, Sequence, Tuple
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 720, 420
MARGIN = dict(left=70, right=150, top=40, bottom=50)
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
           "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#000000")

Series = Tuple[str, np.ndarray, np.ndarray]


def _f(v: float) -> str:
    return f"{v:.2f}"


def _ticks(lo: float, hi: float, count: int = 5):
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / count
    mag = 10 ** math.floor(math.log10(raw))
    step = min((s * mag for s in (1, 2, 5, 10) if s * mag >= raw), default=10 * mag)
    start = math.ceil(lo / step) * step
    return [start + k * step for k in range(int((hi - start) / step + 1e-9) + 1)]


class _Frame:
    def __init__(self, xlim, ylim, logy):
        self.x0, self.x1 = xlim
        self.y0, self.y1 = ylim
        self.logy = logy
        self.pw = WIDTH - MARGIN["left"] - MARGIN["right"]
        self.ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def px(self, x):
        return MARGIN["left"] + (x - self.x0) / (self.x1 - self.x0) * self.pw

    def py(self, y):
        return MARGIN["top"] + (1.0 - (y - self.y0) / (self.y1 - self.y0)) * self.ph


def _limits(values, pad=0.05):
    lo, hi = float(np.min(values)), float(np.max(values))
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    span = hi - lo
    return lo - pad * span, hi + pad * span


def _header(title, xlabel, ylabel):
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<text x="{WIDTH / 2 - MARGIN["right"] / 2:.0f}" y="22" text-anchor="middle" '
           f'font-size="14">{escape(title)}</text>',
           f'<text x="{MARGIN["left"] + (WIDTH - MARGIN["left"] - MARGIN["right"]) / 2:.0f}" '
           f'y="{HEIGHT - 10}" text-anchor="middle">{escape(xlabel)}</text>',
           f'<text x="16" y="{HEIGHT / 2:.0f}" text-anchor="middle" '
           f'transform="rotate(-90 16 {HEIGHT / 2:.0f})">{escape(ylabel)}</text>']
    return out


def _axes(fr: _Frame):
    out = [f'<rect x="{MARGIN["left"]}" y="{MARGIN["top"]}" width="{fr.pw}" height="{fr.ph}" '
           f'fill="none" stroke="black"/>']
    for x in _ticks(fr.x0, fr.x1):
        px = fr.px(x)
        out.append(f'<line x1="{_f(px)}" y1="{MARGIN["top"] + fr.ph}" x2="{_f(px)}" '
                   f'y2="{MARGIN["top"] + fr.ph + 5}" stroke="black"/>')
        out.append(f'<text x="{_f(px)}" y="{MARGIN["top"] + fr.ph + 18}" '
                   f'text-anchor="middle">{x:g}</text>')
    for y in _ticks(fr.y0, fr.y1):
        py = fr.py(y)
        label = f"1e{y:g}" if fr.logy else f"{y:g}"
        out.append(f'<line x1="{MARGIN["left"] - 5}" y1="{_f(py)}" x2="{MARGIN["left"]}" '
                   f'y2="{_f(py)}" stroke="black"/>')
        out.append(f'<text x="{MARGIN["left"] - 8}" y="{_f(py + 4)}" '
                   f'text-anchor="end">{label}</text>')
    return out


def _legend(labels):
    out = []
    for k, label in enumerate(labels):
        y = MARGIN["top"] + 10 + 16 * k
        x = WIDTH - MARGIN["right"] + 12
        c = PALETTE[k % len(PALETTE)]
        out.append(f'<line x1="{x}" y1="{y}" x2="{x + 18}" y2="{y}" stroke="{c}" stroke-width="2"/>')
        out.append(f'<text x="{x + 24}" y="{y + 4}">{escape(label)}</text>')
    return out


def _decimate(x, y, max_points=4000):
    if x.size <= max_points:
        return x, y
    idx = np.unique(np.linspace(0, x.size - 1, max_points).astype(int))
    return x[idx], y[idx]


def line_plot(path, series: Sequence[Series], title: str = "", xlabel: str = "time [s]",
              ylabel: str = "", logy: bool = False, floor: float = 1e-12) -> Path:
    """Write a multi-series line plot; ``logy`` plots ``log10`` of the values."""
    prepared = []
    for label, x, y in series:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if logy:
            y = np.log10(np.maximum(y, floor))
        prepared.append((label, x, y))
    allx = np.concatenate([s[1] for s in prepared])
    ally = np.concatenate([s[2] for s in prepared])
    fr = _Frame((float(allx.min()), float(allx.max()) if allx.max() > allx.min() else allx.min() + 1),
                _limits(ally), logy)
    parts = _header(title, xlabel, ("log10 " if logy else "") + ylabel) + _axes(fr)
    for k, (label, x, y) in enumerate(prepared):
        x, y = _decimate(x, y)
        pts = " ".join(f"{_f(fr.px(a))},{_f(fr.py(b))}" for a, b in zip(x, y))
        parts.append(f'<polyline fill="none" stroke="{PALETTE[k % len(PALETTE)]}" '
                     f'stroke-width="1.2" points="{pts}"/>')
    parts += _legend([s[0] for s in prepared]) + ["</svg>"]
    return _write(path, parts)


def stem_plot(path, x, y, title: str = "", xlabel: str = "", ylabel: str = "",
              hlines: Optional[Sequence[float]] = None) -> Path:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    levels = list(hlines or [])
    fr = _Frame(_limits(x, 0.02), (0.0, max(float(np.max(y, initial=0.0)), *levels, 1e-12) * 1.1),
                False)
    parts = _header(title, xlabel, ylabel) + _axes(fr)
    base = fr.py(0.0)
    for a, b in zip(x, y):
        px, py = fr.px(a), fr.py(b)
        parts.append(f'<line x1="{_f(px)}" y1="{_f(base)}" x2="{_f(px)}" y2="{_f(py)}" '
                     f'stroke="{PALETTE[0]}"/>')
        parts.append(f'<circle cx="{_f(px)}" cy="{_f(py)}" r="2.5" fill="{PALETTE[0]}"/>')
    for level in levels:
        py = fr.py(level)
        parts.append(f'<line x1="{MARGIN["left"]}" y1="{_f(py)}" x2="{MARGIN["left"] + fr.pw}" '
                     f'y2="{_f(py)}" stroke="{PALETTE[1]}" stroke-dasharray="4 3"/>')
    parts.append("</svg>")
    return _write(path, parts)


def _write(path, parts) -> Path:
    path = Path(path)
    path.write_text("\n".join(parts) + "\n")
    return path
