"""Dependency-free SVG rendering for 2-D fields and trajectories.

Artifacts are emitted as SVG rather than raster images: the files are
plain text (diffable, byte-deterministic for fixed inputs) and need no
plotting stack. Three drawable layers cover every figure the pipeline
produces:

* a heatmap of a scalar grid (diverging palette centered on zero,
  run-length merged per row so large grids stay compact),
* zero-level contours extracted by marching squares with linear
  interpolation along cell edges (saddle cells disambiguated by the
  cell-center mean),
* polylines and markers in world coordinates (trajectories, starts).

Grids follow the package convention Z[i, j] = value at (xs[i], ys[j]).
"""

from __future__ import annotations

from typing import List, Optional, Tuple

import numpy as np

from .errors import ConfigError

__all__ = ["marching_squares", "SvgFigure"]

# ---------------------------------------------------------------------------
# marching squares
# ---------------------------------------------------------------------------

# edge ids: B(ottom) 00-10, R(ight) 10-11, T(op) 01-11, L(eft) 00-01
_CASES = {
    1: [("L", "B")],
    2: [("B", "R")],
    3: [("L", "R")],
    4: [("R", "T")],
    6: [("B", "T")],
    7: [("L", "T")],
    8: [("T", "L")],
    9: [("B", "T")],
    11: [("R", "T")],
    12: [("L", "R")],
    13: [("B", "R")],
    14: [("B", "L")],
}


def _edge_point(edge, x0, x1, y0, y1, z00, z10, z01, z11, level):
    if edge == "B":
        za, zb = z00, z10
        t = 0.5 if zb == za else (level - za) / (zb - za)
        return (x0 + t * (x1 - x0), y0)
    if edge == "T":
        za, zb = z01, z11
        t = 0.5 if zb == za else (level - za) / (zb - za)
        return (x0 + t * (x1 - x0), y1)
    if edge == "L":
        za, zb = z00, z01
        t = 0.5 if zb == za else (level - za) / (zb - za)
        return (x0, y0 + t * (y1 - y0))
    za, zb = z10, z11  # R
    t = 0.5 if zb == za else (level - za) / (zb - za)
    return (x1, y0 + t * (y1 - y0))


def marching_squares(xs, ys, Z, level: float = 0.0):
    """Line segments of the level set {Z = level} in world coordinates.

    Returns a list of ((x0, y0), (x1, y1)) pairs; endpoints lie on cell
    edges where the bilinear interpolant crosses the level.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    Z = np.asarray(Z, dtype=float)
    if Z.shape != (xs.size, ys.size):
        raise ConfigError(f"Z shape {Z.shape} does not match axes "
                          f"({xs.size}, {ys.size})")
    inside = Z >= level
    segs = []
    for i in range(xs.size - 1):
        for j in range(ys.size - 1):
            b0 = inside[i, j]
            b1 = inside[i + 1, j]
            b2 = inside[i + 1, j + 1]
            b3 = inside[i, j + 1]
            idx = b0 + 2 * b1 + 4 * b2 + 8 * b3
            if idx in (0, 15):
                continue
            args = (
                xs[i], xs[i + 1], ys[j], ys[j + 1],
                Z[i, j], Z[i + 1, j], Z[i, j + 1], Z[i + 1, j + 1], level,
            )
            if idx in (5, 10):
                center = 0.25 * (args[4] + args[5] + args[6] + args[7])
                if idx == 5:  # corners 00 and 11 inside
                    pairs = [("B", "R"), ("T", "L")] if center >= level else [
                        ("L", "B"), ("R", "T")]
                else:  # corners 10 and 01 inside
                    pairs = [("L", "B"), ("R", "T")] if center >= level else [
                        ("B", "R"), ("T", "L")]
            else:
                pairs = _CASES[idx]
            for ea, eb in pairs:
                segs.append((_edge_point(ea, *args), _edge_point(eb, *args)))
    return segs


# ---------------------------------------------------------------------------
# figure assembly
# ---------------------------------------------------------------------------

_NEG = (192, 57, 43)  # below zero
_POS = (44, 111, 187)  # above zero
_QUANT = 32  # palette steps per side (also the run-length merge key)


def _blend(base: Tuple[int, int, int], t: float) -> str:
    r = round(255 + (base[0] - 255) * t)
    g = round(255 + (base[1] - 255) * t)
    b = round(255 + (base[2] - 255) * t)
    return f"#{r:02x}{g:02x}{b:02x}"


def _color_index(v: float, vmax: float) -> int:
    """Signed palette bucket in [-_QUANT, _QUANT]; 0 is white."""
    if not np.isfinite(v):
        return _QUANT + 1  # sentinel gray
    q = max(-1.0, min(1.0, v / vmax))
    return round(q * _QUANT)


def _index_color(idx: int) -> str:
    if idx == _QUANT + 1:
        return "#b0b0b0"
    if idx >= 0:
        return _blend(_POS, idx / _QUANT)
    return _blend(_NEG, -idx / _QUANT)


class SvgFigure:
    """One plot in world coordinates, rendered to a standalone SVG."""

    def __init__(self, world_lo, world_hi, width: int = 720,
                 title: Optional[str] = None):
        self.lo = np.asarray(world_lo, dtype=float)
        self.hi = np.asarray(world_hi, dtype=float)
        if self.lo.shape != (2,) or self.hi.shape != (2,) or not np.all(
                self.hi > self.lo):
            raise ConfigError("world box must be 2-D with hi > lo")
        self.pad = 12.0
        self.head = 22.0 if title else 0.0
        self.plot_w = float(width) - 2 * self.pad
        aspect = (self.hi[1] - self.lo[1]) / (self.hi[0] - self.lo[0])
        self.plot_h = self.plot_w * aspect
        self.width = float(width)
        self.height = self.plot_h + 2 * self.pad + self.head
        self.title = title
        self._body: List[str] = []

    def _px(self, wx: float, wy: float) -> Tuple[float, float]:
        sx = self.pad + (wx - self.lo[0]) / (self.hi[0] - self.lo[0]) * self.plot_w
        sy = self.head + self.pad + (self.hi[1] - wy) / (
            self.hi[1] - self.lo[1]) * self.plot_h
        return sx, sy

    def add_heatmap(self, xs, ys, Z, vmax: Optional[float] = None) -> None:
        """Filled cells for grid values; equal adjacent colors merge."""
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        Z = np.asarray(Z, dtype=float)
        if Z.shape != (xs.size, ys.size):
            raise ConfigError(f"Z shape {Z.shape} does not match axes "
                              f"({xs.size}, {ys.size})")
        if vmax is None:
            finite = Z[np.isfinite(Z)]
            vmax = float(np.max(np.abs(finite))) if finite.size else 1.0
        if vmax <= 0:
            vmax = 1.0
        # cell edges: midpoints between samples, extended to the box
        def edges(c):
            e = np.empty(c.size + 1)
            e[1:-1] = 0.5 * (c[:-1] + c[1:])
            e[0], e[-1] = c[0], c[-1]
            return e

        ex, ey = edges(xs), edges(ys)
        for j in range(ys.size):
            y_top = ey[j + 1]
            y_bot = ey[j]
            i = 0
            while i < xs.size:
                idx = _color_index(Z[i, j], vmax)
                k = i + 1
                while k < xs.size and _color_index(Z[k, j], vmax) == idx:
                    k += 1
                x0, y0 = self._px(ex[i], y_top)
                x1, y1 = self._px(ex[k], y_bot)
                self._body.append(
                    f'<rect x="{x0:.2f}" y="{y0:.2f}" width="{x1 - x0:.2f}" '
                    f'height="{y1 - y0:.2f}" fill="{_index_color(idx)}"/>'
                )
                i = k

    def add_contour(self, xs, ys, Z, level: float = 0.0, color: str = "#111111",
                    width: float = 1.6, dashes: Optional[str] = None) -> None:
        segs = marching_squares(xs, ys, Z, level)
        if not segs:
            return
        parts = []
        for (x0, y0), (x1, y1) in segs:
            a = self._px(x0, y0)
            b = self._px(x1, y1)
            parts.append(f"M{a[0]:.2f} {a[1]:.2f}L{b[0]:.2f} {b[1]:.2f}")
        dash = f' stroke-dasharray="{dashes}"' if dashes else ""
        self._body.append(
            f'<path d="{"".join(parts)}" stroke="{color}" '
            f'stroke-width="{width}" fill="none"{dash}/>'
        )

    def add_polyline(self, points, color: str = "#111111", width: float = 1.5,
                     opacity: float = 1.0) -> None:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[0] < 2 or pts.shape[1] != 2:
            raise ConfigError("polyline needs >= 2 points of dimension 2")
        coords = " ".join(
            "{:.2f},{:.2f}".format(*self._px(p[0], p[1])) for p in pts
        )
        self._body.append(
            f'<polyline points="{coords}" stroke="{color}" '
            f'stroke-width="{width}" fill="none" stroke-opacity="{opacity}"/>'
        )

    def add_marker(self, xy, color: str = "#111111", radius: float = 3.0) -> None:
        x, y = self._px(float(xy[0]), float(xy[1]))
        self._body.append(
            f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{radius}" fill="{color}"/>'
        )

    def add_label(self, xy, text: str, color: str = "#333333",
                  size: float = 11.0) -> None:
        x, y = self._px(float(xy[0]), float(xy[1]))
        self._body.append(
            f'<text x="{x:.2f}" y="{y:.2f}" font-size="{size}" fill="{color}" '
            f'font-family="monospace">{text}</text>'
        )

    def to_svg(self) -> str:
        head = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width:.0f}" '
            f'height="{self.height:.0f}" '
            f'viewBox="0 0 {self.width:.0f} {self.height:.0f}">',
            f'<rect x="0" y="0" width="{self.width:.0f}" '
            f'height="{self.height:.0f}" fill="#ffffff"/>',
        ]
        if self.title:
            head.append(
                f'<text x="{self.pad}" y="16" font-size="13" fill="#111111" '
                f'font-family="monospace">{self.title}</text>'
            )
        x0, y0 = self._px(self.lo[0], self.hi[1])
        x1, y1 = self._px(self.hi[0], self.lo[1])
        frame = (
            f'<rect x="{x0:.2f}" y="{y0:.2f}" width="{x1 - x0:.2f}" '
            f'height="{y1 - y0:.2f}" fill="none" stroke="#444444"/>'
        )
        return "\n".join(head + self._body + [frame, "</svg>"]) + "\n"

    def save(self, path) -> None:
        with open(path, "w") as f:
            f.write(self.to_svg())
