"""Minimal deterministic SVG line/point charts with error bars."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f")
WIDTH, HEIGHT = 640, 420
LEFT, RIGHT, TOP, BOTTOM = 70, 150, 40, 55


@dataclass(frozen=True)
class Series:
    x: Sequence[float]
    y: Sequence[float]
    y_lo: Optional[Sequence[float]] = None
    y_hi: Optional[Sequence[float]] = None


def _nice_ticks(lo: float, hi: float, target: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / target
    mag = 10 ** math.floor(math.log10(raw))
    step = next(k * mag for k in (1, 2, 2.5, 5, 10) if k * mag >= raw)
    start = math.floor(lo / step) * step
    ticks = []
    t = start
    while t <= hi + 1e-9 * step:
        ticks.append(round(t, 12))
        t += step
    if ticks[-1] < hi:
        ticks.append(round(t, 12))
    return ticks


def _num(v: float) -> str:
    return f"{v:.2f}"


def _label(v: float) -> str:
    return f"{v:.6g}"


def emit_chart(series: Mapping[str, Series | tuple], path, title: str = "", xlabel: str = "",
               ylabel: str = "", style: str = "line", xtick_labels: Optional[Mapping[float, str]] = None) -> Path:
    """Write a standalone SVG chart and return its path.

    Args:
        series: name to :class:`Series` or to an ``(x, y, y_lo, y_hi)`` tuple;
            ``y_lo``/``y_hi`` may be ``None``.
        path: output file.
        style: ``"line"`` joins points, ``"points"`` draws markers only.
        xtick_labels: optional text labels for specific x positions.

    Raises:
        ValueError: no series, an empty series, or mismatched lengths.
    """
    if not series:
        raise ValueError("no series to plot")
    if style not in ("line", "points"):
        raise ValueError(f"unknown style {style!r}")
    data = []
    for name, s in series.items():
        s = s if isinstance(s, Series) else Series(*s)
        x = np.asarray(s.x, dtype=float)
        y = np.asarray(s.y, dtype=float)
        lo = None if s.y_lo is None else np.asarray(s.y_lo, dtype=float)
        hi = None if s.y_hi is None else np.asarray(s.y_hi, dtype=float)
        if x.size == 0:
            raise ValueError(f"series {name!r} is empty")
        for other, label in ((y, "y"), (lo, "y_lo"), (hi, "y_hi")):
            if other is not None and other.shape != x.shape:
                raise ValueError(f"series {name!r}: {label} has {other.size} values but x has {x.size}")
        data.append((str(name), x, y, lo, hi))

    xs = np.concatenate([d[1] for d in data])
    ys = np.concatenate([np.concatenate([d[2]] + [a for a in d[3:] if a is not None]) for d in data])
    finite = ys[np.isfinite(ys)]
    ylo, yhi = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
    if yhi - ylo < 1e-12:
        pad = max(abs(yhi) * 0.1, 1.0)
        ylo, yhi = ylo - pad, yhi + pad
    yt = _nice_ticks(ylo, yhi)
    xlo, xhi = float(xs.min()), float(xs.max())
    if xhi - xlo < 1e-12:
        xlo, xhi = xlo - 1.0, xhi + 1.0
    xt = sorted(xtick_labels) if xtick_labels else _nice_ticks(xlo, xhi)
    x0, x1 = (min(xt[0], xlo), max(xt[-1], xhi))
    if xtick_labels:
        x0, x1 = x0 - 0.5, x1 + 0.5
    y0, y1 = yt[0], yt[-1]
    pw, ph = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM

    def px(v):
        return LEFT + (v - x0) / (x1 - x0) * pw

    def py(v):
        return TOP + (1 - (v - y0) / (y1 - y0)) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>']
    if title:
        out.append(f'<text x="{WIDTH / 2:.2f}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>')
    out.append(f'<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    for t in yt:
        yy = _num(py(t))
        out.append(f'<line x1="{LEFT}" y1="{yy}" x2="{LEFT + pw}" y2="{yy}" stroke="#dddddd"/>')
        out.append(f'<text x="{LEFT - 6}" y="{yy}" text-anchor="end" dominant-baseline="middle">{_label(t)}</text>')
    for t in xt:
        xx = _num(px(t))
        text = xtick_labels[t] if xtick_labels else _label(t)
        out.append(f'<line x1="{xx}" y1="{TOP + ph}" x2="{xx}" y2="{TOP + ph + 4}" stroke="black"/>')
        out.append(f'<text x="{xx}" y="{TOP + ph + 16}" text-anchor="middle">{escape(str(text))}</text>')
    if y0 < 0 < y1:
        out.append(f'<line x1="{LEFT}" y1="{_num(py(0))}" x2="{LEFT + pw}" y2="{_num(py(0))}" '
                   f'stroke="#888888" stroke-dasharray="4,3"/>')
    if xlabel:
        out.append(f'<text x="{LEFT + pw / 2:.2f}" y="{HEIGHT - 12}" text-anchor="middle">{escape(xlabel)}</text>')
    if ylabel:
        out.append(f'<text x="16" y="{TOP + ph / 2:.2f}" text-anchor="middle" '
                   f'transform="rotate(-90 16 {TOP + ph / 2:.2f})">{escape(ylabel)}</text>')
    for k, (name, x, y, lo, hi) in enumerate(data):
        color = PALETTE[k % len(PALETTE)]
        ok = np.isfinite(y)
        if style == "line" and ok.sum() > 1:
            pts = " ".join(f"{_num(px(a))},{_num(py(b))}" for a, b in zip(x[ok], y[ok]))
            out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        for idx in np.flatnonzero(ok):
            cx, cy = _num(px(x[idx])), _num(py(y[idx]))
            if lo is not None and hi is not None and np.isfinite(lo[idx]) and np.isfinite(hi[idx]):
                out.append(f'<line x1="{cx}" y1="{_num(py(lo[idx]))}" x2="{cx}" y2="{_num(py(hi[idx]))}" '
                           f'stroke="{color}" stroke-width="1"/>')
            if style == "points" or x.size <= 60:
                out.append(f'<circle cx="{cx}" cy="{cy}" r="{2.5 if style == "line" else 4}" fill="{color}"/>')
        ly = TOP + 14 + 18 * k
        lx = LEFT + pw + 12
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 18}" y2="{ly}" stroke="{color}" stroke-width="3"/>')
        out.append(f'<text x="{lx + 24}" y="{ly}" dominant-baseline="middle">{escape(name)}</text>')
    out.append("</svg>")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(out) + "\n")
    return path
