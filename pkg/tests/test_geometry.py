import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from coordtok import geometry as G
from coordtok.codec import ImageExtent

from oracles import dist_to_boundary


def rotated_square(cx, cy, side, deg):
    t = math.radians(deg)
    c, s = math.cos(t), math.sin(t)
    h = side / 2
    return [(cx + c * a - s * b, cy + s * a + c * b) for a, b in ((-h, -h), (h, -h), (h, h), (-h, h))]


def convex_polygon(rng, scale):
    """Random convex polygon: sorted angles on a jittered ellipse."""
    k = int(rng.integers(3, 9))
    ang = np.sort(rng.uniform(0, 2 * np.pi, k))
    c = rng.uniform(0.3, 0.7, 2) * scale
    r = rng.uniform(0.05, 0.3, 2) * scale
    return np.stack([c[0] + r[0] * np.cos(ang), c[1] + r[1] * np.sin(ang)], 1)


def halfplane_inside(poly, p):
    """Independent convex containment: the point is left of (or on) every edge.

    ``p`` may be one point or an ``(N, 2)`` array."""
    v = np.asarray(poly)
    p = np.asarray(p, dtype=np.float64)
    area2 = np.sum(v[:, 0] * np.roll(v[:, 1], -1) - np.roll(v[:, 0], -1) * v[:, 1])
    sign = 1 if area2 > 0 else -1
    a, b = v, np.roll(v, -1, axis=0)
    q = p.reshape(-1, 1, 2)
    cross = (b[:, 0] - a[:, 0]) * (q[..., 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (q[..., 0] - a[:, 0])
    inside = np.all(sign * cross >= 0, axis=-1)
    return bool(inside[0]) if p.ndim == 1 else inside


# boxes

def test_iou_examples():
    assert G.iou((0, 0, 10, 10), (0, 0, 10, 10)) == 1.0
    assert G.iou((0, 0, 1, 1), (2, 2, 3, 3)) == 0.0
    assert G.iou((0, 0, 10, 10), (5, 5, 15, 15)) == pytest.approx(25 / 175, abs=1e-15)
    assert G.iou((1, 1, 1, 1), (1, 1, 1, 1)) == 0.0


boxes = st.tuples(*[st.floats(0, 100, allow_nan=False)] * 4).map(G.as_box)


@given(boxes, boxes)
def test_iou_symmetric_and_bounded(a, b):
    v = G.iou(a, b)
    assert 0.0 <= v <= 1.0
    assert v == G.iou(b, a)


def test_iou_matrix_matches_pairwise():
    rng = np.random.default_rng(1)
    a = [G.as_box(rng.uniform(0, 50, 4)) for _ in range(5)]
    b = [G.as_box(rng.uniform(0, 50, 4)) for _ in range(7)]
    m = G.iou_matrix(a, b)
    assert m.shape == (5, 7)
    assert np.allclose(m, [[G.iou(x, y) for y in b] for x in a], atol=1e-14)
    assert G.iou_matrix([], b).shape == (0, 7)


def test_point_in_box_closed():
    b = (0, 0, 10, 5)
    assert G.point_in_box((0, 0), b) and G.point_in_box((10, 5), b) and G.point_in_box((5, 2.5), b)
    assert not G.point_in_box((10 + 1e-9, 0), b)


# polygons

def test_point_in_polygon_basics():
    sq = [(0, 0), (10, 0), (10, 10), (0, 10)]
    assert G.point_in_polygon((5, 5), sq)
    assert G.point_in_polygon((0, 5), sq) and G.point_in_polygon((10, 10), sq)
    assert not G.point_in_polygon((11, 5), sq)
    # closing vertex and repeated vertices are ignored
    assert G.point_in_polygon((5, 5), sq + [(0, 0), (0, 0)])


def test_point_in_polygon_matches_convex_oracle():
    rng = np.random.default_rng(2)
    for _ in range(300):
        poly = convex_polygon(rng, 4096)
        pts = rng.uniform(0, 4096, (20, 2))
        vec = G.points_in_polygon(pts, poly)
        for p, got in zip(pts, vec):
            assert got == G.point_in_polygon(p, poly)
            if dist_to_boundary(poly, p) > 1.0:
                assert got == halfplane_inside(poly, p)


def test_rasterize_full_and_empty():
    ext = ImageExtent(20, 10)
    full = G.rasterize([(0, 0), (20, 0), (20, 10), (0, 10)], ext)
    assert full.area == 200
    assert G.rasterize([(0, 0), (5, 5), (10, 10)], ext).is_empty()
    assert G.rasterize([(1, 1), (2, 2)], ext).is_empty()


def test_rasterize_matches_pixel_center_oracle():
    rng = np.random.default_rng(3)
    ys, xs = np.mgrid[0:64, 0:64] + 0.5
    centers = np.stack([xs.ravel(), ys.ravel()], 1)
    for _ in range(30):
        poly = convex_polygon(rng, 64)
        mask = G.rasterize(poly, ImageExtent(64, 64))
        expect = halfplane_inside(poly, centers).reshape(64, 64)
        near = (dist_to_boundary(poly, centers) < 1e-9).reshape(64, 64)
        assert np.array_equal(mask.bits[~near], expect[~near])


def test_triangle_area_close_to_analytic():
    tri = [(100, 100), (900, 150), (400, 850)]
    mask = G.rasterize(tri, ImageExtent(1000, 1000))
    assert abs(mask.area - G.polygon_area(tri)) / G.polygon_area(tri) < 0.01


def test_mask_is_read_only():
    m = G.rasterize([(0, 0), (4, 0), (4, 4)], ImageExtent(4, 4))
    with pytest.raises(ValueError):
        m.bits[0, 0] = True


def test_polygon_aabb():
    assert G.polygon_aabb([(0, 0), (4, 0), (0, 3)]).tolist() == [0, 0, 4, 3]
    rect = [(2, 3), (7, 3), (7, 9), (2, 9)]
    assert G.polygon_aabb(rect).tolist() == [2, 3, 7, 9]
    for deg in (0, 17, 45, 80):
        x0, y0, x1, y1 = G.polygon_aabb(rotated_square(0, 0, 10, deg))
        t = math.radians(deg)
        assert x1 - x0 == pytest.approx(10 * (abs(math.cos(t)) + abs(math.sin(t))))


def test_convex_hull_drops_interior_and_collinear():
    pts = [(0, 0), (2, 0), (4, 0), (4, 4), (0, 4), (2, 2), (1, 3)]
    hull = G.convex_hull(pts)
    assert sorted(map(tuple, hull.tolist())) == [(0, 0), (0, 4), (4, 0), (4, 4)]


# rotated rectangles

def _angle_err(a, b):
    d = (a - b) % 90.0
    return min(d, 90.0 - d)


@pytest.mark.parametrize("deg", [0, 7.5, 15, 30, 44, 60, 83])
def test_min_area_rect_recovers_rotation(deg):
    mask = G.rasterize(rotated_square(256, 256, 200, deg), ImageExtent(512, 512))
    r = G.min_area_rect(mask)
    assert _angle_err(r.angle, deg) < 1.0
    assert r.size[0] == pytest.approx(200, abs=2) and r.size[1] == pytest.approx(200, abs=2)


def test_min_area_rect_square_and_pixel():
    bits = np.zeros((50, 50), bool)
    bits[10:30, 5:25] = True
    r = G.min_area_rect(G.RasterMask(50, 50, bits))
    assert r.angle == 0 and r.size == (20.0, 20.0)
    assert r.center == pytest.approx((15, 20))
    one = np.zeros((5, 5), bool)
    one[2, 3] = True
    r = G.min_area_rect(G.RasterMask(5, 5, one))
    assert r.size == (1.0, 1.0) and r.center == pytest.approx((3.5, 2.5))
    with pytest.raises(G.EmptyMask):
        G.min_area_rect(G.RasterMask(5, 5, np.zeros((5, 5), bool)))


@given(st.lists(st.tuples(st.integers(0, 15), st.integers(0, 15)), min_size=1, max_size=40))
def test_min_area_rect_no_larger_than_aabb_and_encloses(cells):
    bits = np.zeros((16, 16), bool)
    for x, y in cells:
        bits[y, x] = True
    r = G.min_area_rect(G.RasterMask(16, 16, bits))
    ys, xs = np.nonzero(bits)
    aabb = (xs.max() - xs.min() + 1) * (ys.max() - ys.min() + 1)
    assert r.area <= aabb + 1e-9
    centers = np.stack([xs + 0.5, ys + 0.5], 1)
    assert all(G.point_in_polygon(c, r.corners) for c in centers)


def test_center_point_of_cases():
    bits = np.zeros((40, 40), bool)
    bits[5:25, 5:25] = True
    assert G.center_point_of(G.RasterMask(40, 40, bits)) == pytest.approx((15, 15))
    L = np.zeros((100, 100), bool)
    L[10:90, 10:20] = True
    L[80:90, 10:90] = True
    assert G.center_point_of(G.RasterMask(100, 100, L)) is None
    yy, xx = np.mgrid[0:101, 0:101] + 0.5
    disk = (xx - 50.5) ** 2 + (yy - 50.5) ** 2 <= 30 ** 2
    c = G.center_point_of(G.RasterMask(101, 101, disk))
    assert c is not None and c == pytest.approx((50.5, 50.5), abs=1.0)


def test_diagonal_intersection():
    assert G.diagonal_intersection([(0, 0), (4, 0), (4, 2), (0, 2)]) == pytest.approx((2, 1))


@given(boxes)
def test_iou_self_is_one(b):
    if G.box_area(b) > 0:
        assert G.iou(b, b) == pytest.approx(1.0, abs=1e-12)


@given(st.lists(st.tuples(st.integers(0, 23), st.integers(0, 23)), min_size=1, max_size=60))
def test_center_point_lies_in_mask(cells):
    bits = np.zeros((24, 24), bool)
    for x, y in cells:
        bits[y, x] = True
    m = G.RasterMask(24, 24, bits)
    c = G.center_point_of(m)
    if c is not None:
        assert m.contains(c)
