"""Minimal static SVG line plots (no plotting dependency)."""

from __future__ import annotations

from dataclasses import dataclass, field
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


@dataclass
class Series:
    x: np.ndarray
    y: np.ndarray
    label: str
    color: str = ""
    dashed: bool = False
    fill_to: np.ndarray | None = None  # optional lower curve for a band


@dataclass
class Figure:
    title: str
    xlabel: str = ""
    ylabel: str = ""
    width: int = 640
    height: int = 480
    equal_aspect: bool = False
    series: list = field(default_factory=list)

    def add(self, x, y, label, **kw) -> "Figure":
        s = Series(np.asarray(x, dtype=float), np.asarray(y, dtype=float), label, **kw)
        if not s.color:
            s.color = PALETTE[len(self.series) % len(PALETTE)]
        self.series.append(s)
        return self

    def _limits(self):
        xs = np.concatenate([s.x for s in self.series])
        ys = np.concatenate([s.y for s in self.series] + [s.fill_to for s in self.series if s.fill_to is not None])
        x0, x1, y0, y1 = xs.min(), xs.max(), ys.min(), ys.max()
        if x1 == x0:
            x0, x1 = x0 - 1, x1 + 1
        if y1 == y0:
            y0, y1 = y0 - 1, y1 + 1
        if self.equal_aspect:
            cx, cy, r = (x0 + x1) / 2, (y0 + y1) / 2, max(x1 - x0, y1 - y0) / 2
            x0, x1, y0, y1 = cx - r, cx + r, cy - r, cy + r
        px, py = 0.05 * (x1 - x0), 0.05 * (y1 - y0)
        return x0 - px, x1 + px, y0 - py, y1 + py

    def render(self) -> str:
        m = 60
        W, H = self.width, self.height
        x0, x1, y0, y1 = self._limits()
        sx = lambda v: m + (v - x0) / (x1 - x0) * (W - 2 * m)
        sy = lambda v: H - m - (v - y0) / (y1 - y0) * (H - 2 * m)
        out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
               f'<rect width="{W}" height="{H}" fill="white"/>',
               f'<text x="{W / 2:.1f}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">'
               f'{escape(self.title)}</text>',
               f'<rect x="{m}" y="{m}" width="{W - 2 * m}" height="{H - 2 * m}" fill="none" stroke="#444"/>']
        for v in np.linspace(x0, x1, 5):
            out.append(f'<text x="{sx(v):.1f}" y="{H - m + 16}" text-anchor="middle" font-family="sans-serif" '
                       f'font-size="11">{v:.3g}</text>')
        for v in np.linspace(y0, y1, 5):
            out.append(f'<text x="{m - 6}" y="{sy(v) + 4:.1f}" text-anchor="end" font-family="sans-serif" '
                       f'font-size="11">{v:.3g}</text>')
        out.append(f'<text x="{W / 2:.1f}" y="{H - 14}" text-anchor="middle" font-family="sans-serif" '
                   f'font-size="12">{escape(self.xlabel)}</text>')
        out.append(f'<text x="16" y="{H / 2:.1f}" transform="rotate(-90 16 {H / 2:.1f})" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="12">{escape(self.ylabel)}</text>')
        for k, s in enumerate(self.series):
            pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(s.x, s.y))
            if s.fill_to is not None:
                back = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(s.x[::-1], s.fill_to[::-1]))
                out.append(f'<polygon points="{pts} {back}" fill="{s.color}" fill-opacity="0.25" stroke="none"/>')
            else:
                dash = ' stroke-dasharray="6,4"' if s.dashed else ""
                out.append(f'<polyline points="{pts}" fill="none" stroke="{s.color}" stroke-width="1.5"{dash}/>')
            ly = m + 16 + 16 * k
            out.append(f'<line x1="{W - m - 150}" y1="{ly - 4}" x2="{W - m - 130}" y2="{ly - 4}" '
                       f'stroke="{s.color}" stroke-width="3"/>')
            out.append(f'<text x="{W - m - 124}" y="{ly}" font-family="sans-serif" font-size="11">'
                       f'{escape(s.label)}</text>')
        out.append("</svg>")
        return "\n".join(out) + "\n"

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.render())
