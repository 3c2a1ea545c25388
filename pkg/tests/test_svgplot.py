"""SVG plotting tests. Marching squares is checked against implicit
curves with known geometry (a line, where linear interpolation is
exact, and a circle, where total arc length pins the topology); the
SVG assembly is checked for well-formedness and byte determinism."""

import math
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from cbfsynth import svgplot as SVG
from cbfsynth.errors import ConfigError

# ---------------------------------------------------------------------------
# marching squares
# ---------------------------------------------------------------------------


def test_contour_of_linear_field_is_exact():
    xs = np.linspace(0.0, 10.0, 41)
    ys = np.linspace(-2.0, 2.0, 17)
    XX, YY = np.meshgrid(xs, ys, indexing="ij")
    Z = XX - 3.1  # zero set: the vertical line x = 3.1
    segs = SVG.marching_squares(xs, ys, Z, level=0.0)
    assert len(segs) == 16  # one segment per y-cell
    for (x0, y0), (x1, y1) in segs:
        assert x0 == pytest.approx(3.1, abs=1e-12)
        assert x1 == pytest.approx(3.1, abs=1e-12)
    # the segments tile [-2, 2] in y
    lo = min(min(s[0][1], s[1][1]) for s in segs)
    hi = max(max(s[0][1], s[1][1]) for s in segs)
    assert (lo, hi) == (-2.0, 2.0)


def test_contour_of_circle_has_right_length_and_radius():
    xs = np.linspace(-2.0, 2.0, 201)
    ys = np.linspace(-2.0, 2.0, 201)
    XX, YY = np.meshgrid(xs, ys, indexing="ij")
    Z = 1.0 - np.sqrt(XX**2 + YY**2)  # inside the unit circle: Z >= 0
    segs = SVG.marching_squares(xs, ys, Z, level=0.0)
    total = sum(math.hypot(b[0] - a[0], b[1] - a[1]) for a, b in segs)
    assert total == pytest.approx(2.0 * math.pi, rel=5e-3)
    for a, b in segs:
        assert math.hypot(*a) == pytest.approx(1.0, abs=2e-4)
        assert math.hypot(*b) == pytest.approx(1.0, abs=2e-4)


def test_contour_level_shift_matches_zero_of_shifted_field():
    xs = np.linspace(0.0, 4.0, 30)
    ys = np.linspace(0.0, 4.0, 30)
    XX, YY = np.meshgrid(xs, ys, indexing="ij")
    Z = XX + YY
    a = SVG.marching_squares(xs, ys, Z, level=3.0)
    b = SVG.marching_squares(xs, ys, Z - 3.0, level=0.0)
    assert a == b


def test_saddle_cells_produce_two_segments():
    xs = np.array([0.0, 1.0])
    ys = np.array([0.0, 1.0])
    Z = np.array([[1.0, -1.0], [-1.0, 1.0]])  # diag corners inside
    segs = SVG.marching_squares(xs, ys, Z, level=0.0)
    assert len(segs) == 2
    Z2 = np.array([[-1.0, 1.0], [1.0, -1.0]])
    segs2 = SVG.marching_squares(xs, ys, Z2, level=0.0)
    assert len(segs2) == 2


def test_uniform_field_has_no_contour():
    xs = np.linspace(0, 1, 5)
    ys = np.linspace(0, 1, 5)
    assert SVG.marching_squares(xs, ys, np.ones((5, 5)), 0.0) == []
    with pytest.raises(ConfigError, match="shape"):
        SVG.marching_squares(xs, ys, np.ones((4, 5)), 0.0)


# ---------------------------------------------------------------------------
# figure assembly
# ---------------------------------------------------------------------------


def _demo_figure():
    xs = np.linspace(-1.0, 11.0, 60)
    ys = np.linspace(-6.0, 6.0, 40)
    XX, YY = np.meshgrid(xs, ys, indexing="ij")
    Z = np.sin(XX) + 0.3 * YY
    fig = SVG.SvgFigure([-1.0, -6.0], [11.0, 6.0], width=400, title="demo")
    fig.add_heatmap(xs, ys, Z)
    fig.add_contour(xs, ys, Z, level=0.0, color="#000000")
    fig.add_polyline([[0.0, 0.0], [5.0, 2.0], [10.0, -1.0]], color="#ff8800")
    fig.add_marker([0.0, 0.0], color="#ff8800")
    fig.add_label([0.2, 5.0], "start")
    return fig


def test_svg_well_formed_and_layered():
    doc = _demo_figure().to_svg()
    root = ET.fromstring(doc)
    assert root.tag.endswith("svg")
    tags = [el.tag.split("}")[-1] for el in root.iter()]
    for needed in ("rect", "path", "polyline", "circle", "text"):
        assert needed in tags
    assert "viewBox" in root.attrib


def test_svg_byte_deterministic():
    assert _demo_figure().to_svg() == _demo_figure().to_svg()


def test_world_to_pixel_corners_land_on_frame():
    fig = SVG.SvgFigure([0.0, 0.0], [10.0, 5.0], width=520)
    x0, y0 = fig._px(0.0, 5.0)  # top-left world corner
    x1, y1 = fig._px(10.0, 0.0)  # bottom-right world corner
    assert (x0, y0) == (fig.pad, fig.pad)
    assert x1 == pytest.approx(fig.width - fig.pad)
    assert y1 == pytest.approx(fig.height - fig.pad)
    # y must flip: larger world y is smaller pixel y
    assert fig._px(0.0, 5.0)[1] < fig._px(0.0, 0.0)[1]


def test_heatmap_run_length_merging():
    xs = np.linspace(0.0, 1.0, 50)
    ys = np.array([0.0, 1.0])
    Z = np.ones((50, 2))  # constant rows merge to a single rect each
    fig = SVG.SvgFigure([0.0, 0.0], [1.0, 1.0])
    fig.add_heatmap(xs, ys, Z)
    rects = [e for e in fig._body if e.startswith("<rect")]
    assert len(rects) == 2
    fig2 = SVG.SvgFigure([0.0, 0.0], [1.0, 1.0])
    Z2 = np.linspace(-1.0, 1.0, 50)[:, None] * np.ones((50, 2))
    fig2.add_heatmap(xs, ys, Z2)
    assert len([e for e in fig2._body if e.startswith("<rect")]) > 2


def test_heatmap_palette_signs():
    xs = np.array([0.0, 1.0, 2.0])
    ys = np.array([0.0, 1.0])
    Z = np.array([[-5.0, -5.0], [0.0, 0.0], [5.0, 5.0]])
    fig = SVG.SvgFigure([0.0, 0.0], [2.0, 1.0])
    fig.add_heatmap(xs, ys, Z)
    doc = fig.to_svg()
    assert "#c0392b" in doc  # saturated negative
    assert "#2c6fbb" in doc  # saturated positive
    assert "#ffffff" in doc  # zero is white (also the background)


def test_validation_errors():
    with pytest.raises(ConfigError):
        SVG.SvgFigure([0.0, 0.0], [0.0, 1.0])
    fig = SVG.SvgFigure([0.0, 0.0], [1.0, 1.0])
    with pytest.raises(ConfigError):
        fig.add_polyline([[0.0, 0.0]])
