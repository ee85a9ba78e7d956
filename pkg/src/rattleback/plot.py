"""Deterministic SVG projections of trajectories and fibers."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptySeries

__all__ = ["Projection", "Series", "PlotSpec", "render_svg", "emit_svg"]

SIZE = 800
MARGIN = 40
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


class Projection(str, enum.Enum):
    XY = "XY"
    XZ = "XZ"
    YZ = "YZ"

    @property
    def axes(self) -> tuple[int, int]:
        return {"XY": (0, 1), "XZ": (0, 2), "YZ": (1, 2)}[self.value]


@dataclass
class Series:
    label: str
    points: np.ndarray
    closed: bool = False


@dataclass
class PlotSpec:
    projection: Projection
    series: list[Series] = field(default_factory=list)
    bounds: tuple[float, float, float, float] | None = None  # (umin, umax, vmin, vmax)

    def __post_init__(self):
        self.projection = Projection(self.projection)


def _bounds(plot: PlotSpec) -> tuple[float, float, float, float]:
    if plot.bounds is not None:
        return tuple(float(b) for b in plot.bounds)
    i, j = plot.projection.axes
    pts = np.concatenate([np.asarray(s.points, dtype=float).reshape(-1, 3) for s in plot.series])
    lo = np.array([pts[:, i].min(), pts[:, j].min()])
    hi = np.array([pts[:, i].max(), pts[:, j].max()])
    # square extent keeps circles round
    half = max(0.5 * float(np.max(hi - lo)), 1e-9) * 1.05
    mid = 0.5 * (lo + hi)
    return (mid[0] - half, mid[0] + half, mid[1] - half, mid[1] + half)


def _f(v: float) -> str:
    out = f"{v:.2f}"
    return "0.00" if out == "-0.00" else out


def render_svg(plot: PlotSpec) -> str:
    if not plot.series or any(len(np.asarray(s.points).reshape(-1, 3)) == 0 for s in plot.series):
        raise EmptySeries("plot needs at least one nonempty series")
    umin, umax, vmin, vmax = _bounds(plot)
    i, j = plot.projection.axes
    scale_u = (SIZE - 2 * MARGIN) / (umax - umin)
    scale_v = (SIZE - 2 * MARGIN) / (vmax - vmin)
    names = plot.projection.value
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">',
        f'<rect x="0" y="0" width="{SIZE}" height="{SIZE}" fill="white"/>',
        f'<rect x="{MARGIN}" y="{MARGIN}" width="{SIZE - 2 * MARGIN}" height="{SIZE - 2 * MARGIN}" '
        'fill="none" stroke="#888888" stroke-width="1"/>',
        f'<text x="{SIZE // 2}" y="{SIZE - 12}" font-size="14" text-anchor="middle">{names[0].lower()}</text>',
        f'<text x="14" y="{SIZE // 2}" font-size="14" text-anchor="middle">{names[1].lower()}</text>',
    ]
    for k, s in enumerate(plot.series):
        pts = np.asarray(s.points, dtype=float).reshape(-1, 3)
        u = MARGIN + (pts[:, i] - umin) * scale_u
        v = SIZE - MARGIN - (pts[:, j] - vmin) * scale_v
        coords = " ".join(f"{_f(a)},{_f(b)}" for a, b in zip(u, v))
        tag = "polygon" if s.closed else "polyline"
        color = PALETTE[k % len(PALETTE)]
        lines.append(f'<{tag} fill="none" stroke="{color}" stroke-width="1.5" points="{coords}">'
                     f'<title>{s.label}</title></{tag}>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def emit_svg(plot: PlotSpec, path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(render_svg(plot))
