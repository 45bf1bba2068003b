"""Hand-written SVG figures: line charts and a small heatmap.

No plotting dependency; these are display-only artifacts for the two
ablation commands.
"""

from __future__ import annotations

import math

_W, _H = 420, 300
_ML, _MR, _MT, _MB = 58, 16, 34, 46  # margins

_COLORS = ("#1f6fb2", "#d1495b", "#3e9651", "#8153a8", "#c97b1e", "#4fadad")


def _fmt(x: float) -> str:
    if x == 0:
        return "0"
    if abs(x) >= 1000 or abs(x) < 0.01:
        return f"{x:.2g}"
    return f"{x:.3g}"


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    step = (hi - lo) / (n - 1)
    return [lo + i * step for i in range(n)]


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def svg_line_chart(series, title: str, xlabel: str, ylabel: str, logx: bool = False) -> str:
    """series: list of (label, xs, ys). Returns one standalone <svg> chart."""
    xs_all = [x for _, xs, _ in series for x in xs]
    ys_all = [y for _, _, ys in series for y in ys if not math.isnan(y)]
    if not xs_all or not ys_all:
        xs_all, ys_all = [0.0, 1.0], [0.0, 1.0]
    tx = (lambda v: math.log10(v)) if logx else (lambda v: v)
    x_lo, x_hi = min(map(tx, xs_all)), max(map(tx, xs_all))
    y_lo, y_hi = min(ys_all), max(ys_all)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    pad = 0.06 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad
    pw, ph = _W - _ML - _MR, _H - _MT - _MB

    def px(v):
        return _ML + (tx(v) - x_lo) / (x_hi - x_lo) * pw

    def py(v):
        return _MT + (1.0 - (v - y_lo) / (y_hi - y_lo)) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W/2:.0f}" y="18" text-anchor="middle" font-size="13">{_esc(title)}</text>',
        f'<rect x="{_ML}" y="{_MT}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
    ]
    for t in _ticks(y_lo + pad, y_hi - pad):
        parts.append(
            f'<line x1="{_ML - 4}" y1="{py(t):.1f}" x2="{_ML}" y2="{py(t):.1f}" stroke="#444"/>'
            f'<text x="{_ML - 7}" y="{py(t) + 3.5:.1f}" text-anchor="end">{_fmt(t)}</text>'
        )
    for t in _ticks(min(xs_all), max(xs_all)):
        xpix = px(t)
        parts.append(
            f'<line x1="{xpix:.1f}" y1="{_MT + ph}" x2="{xpix:.1f}" y2="{_MT + ph + 4}" stroke="#444"/>'
            f'<text x="{xpix:.1f}" y="{_MT + ph + 16}" text-anchor="middle">{_fmt(t)}</text>'
        )
    parts.append(
        f'<text x="{_ML + pw / 2:.0f}" y="{_H - 10}" text-anchor="middle">{_esc(xlabel)}</text>'
    )
    parts.append(
        f'<text x="14" y="{_MT + ph / 2:.0f}" text-anchor="middle" '
        f'transform="rotate(-90 14 {_MT + ph / 2:.0f})">{_esc(ylabel)}</text>'
    )
    for k, (label, xs, ys) in enumerate(series):
        color = _COLORS[k % len(_COLORS)]
        pts = " ".join(
            f"{px(x):.1f},{py(y):.1f}" for x, y in zip(xs, ys) if not math.isnan(y)
        )
        parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.6"/>'
        )
        for x, y in zip(xs, ys):
            if not math.isnan(y):
                parts.append(f'<circle cx="{px(x):.1f}" cy="{py(y):.1f}" r="2.4" fill="{color}"/>')
        parts.append(
            f'<text x="{_ML + pw - 4}" y="{_MT + 14 + 13 * k}" text-anchor="end" '
            f'fill="{color}">{_esc(str(label))}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts)


def _heat_color(v: float) -> str:
    """0 -> pale, 1 -> saturated blue."""
    v = 0.0 if math.isnan(v) else min(max(v, 0.0), 1.0)
    r = int(247 - v * (247 - 33))
    g = int(251 - v * (251 - 102))
    b = int(255 - v * (255 - 172))
    return f"rgb({r},{g},{b})"


def svg_heatmap(values, row_labels, col_labels, title: str, row_title: str = "", col_title: str = "") -> str:
    """values[i][j] in [0,1] or NaN; one colored cell per entry."""
    rows, cols = len(row_labels), len(col_labels)
    cell = 64
    ml, mt = 96, 72
    w = ml + cols * cell + 20
    h = mt + rows * cell + 24
    finite = [v for row in values for v in row if not math.isnan(v)]
    lo = min(finite) if finite else 0.0
    hi = max(finite) if finite else 1.0
    rng = (hi - lo) or 1.0
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
        f'font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>',
        f'<text x="{w/2:.0f}" y="18" text-anchor="middle" font-size="13">{_esc(title)}</text>',
        f'<text x="{ml + cols * cell / 2:.0f}" y="36" text-anchor="middle">{_esc(col_title)}</text>',
    ]
    if row_title:
        parts.append(
            f'<text x="16" y="{mt + rows * cell / 2:.0f}" text-anchor="middle" '
            f'transform="rotate(-90 16 {mt + rows * cell / 2:.0f})">{_esc(row_title)}</text>'
        )
    for j, cl in enumerate(col_labels):
        parts.append(
            f'<text x="{ml + j * cell + cell / 2:.0f}" y="{mt - 8}" '
            f'text-anchor="middle">{_esc(str(cl))}</text>'
        )
    for i, rl in enumerate(row_labels):
        parts.append(
            f'<text x="{ml - 8}" y="{mt + i * cell + cell / 2 + 4:.0f}" '
            f'text-anchor="end">{_esc(str(rl))}</text>'
        )
        for j in range(cols):
            v = values[i][j]
            norm = float("nan") if math.isnan(v) else (v - lo) / rng
            x0, y0 = ml + j * cell, mt + i * cell
            fill = "#eee" if math.isnan(v) else _heat_color(norm)
            label = "nan" if math.isnan(v) else f"{v:.3f}"
            parts.append(
                f'<rect x="{x0}" y="{y0}" width="{cell}" height="{cell}" '
                f'fill="{fill}" stroke="#777"/>'
                f'<text x="{x0 + cell / 2:.0f}" y="{y0 + cell / 2 + 4:.0f}" '
                f'text-anchor="middle">{label}</text>'
            )
    parts.append("</svg>")
    return "\n".join(parts)
