"""2-D primitives on continuous pixel coordinates.

Boxes are ``(x0, y0, x1, y1)`` with closed boundaries; polygons are ``(k, 2)``
vertex arrays; pixel ``(i, j)`` has its center at ``(i + 0.5, j + 0.5)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _geomkern
from .codec import ImageExtent


class EmptyMask(ValueError):
    pass


def as_box(b) -> np.ndarray:
    """Corner-ordered float box; swaps reversed corners."""
    x0, y0, x1, y1 = (float(v) for v in b)
    return np.array([min(x0, x1), min(y0, y1), max(x0, x1), max(y0, y1)])


def box_area(b) -> float:
    return max(b[2] - b[0], 0.0) * max(b[3] - b[1], 0.0)


def iou(a, b) -> float:
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    inter = max(iw, 0.0) * max(ih, 0.0)
    union = box_area(a) + box_area(b) - inter
    if union <= 0:
        return 0.0
    return inter / union


def iou_matrix(a, b) -> np.ndarray:
    """Pairwise IoU, shape ``(len(a), len(b))``."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    if a.shape[0] == 0 or b.shape[0] == 0:
        return np.zeros((a.shape[0], b.shape[0]))
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = np.clip(a[:, 2] - a[:, 0], 0, None) * np.clip(a[:, 3] - a[:, 1], 0, None)
    area_b = np.clip(b[:, 2] - b[:, 0], 0, None) * np.clip(b[:, 3] - b[:, 1], 0, None)
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(union > 0, inter / union, 0.0)
    return out


def point_in_box(p, b) -> bool:
    return b[0] <= p[0] <= b[2] and b[1] <= p[1] <= b[3]


def _poly_arrays(poly):
    v = np.asarray(poly, dtype=np.float64).reshape(-1, 2)
    if len(v) > 1:
        keep = np.ones(len(v), dtype=bool)
        keep[1:] = np.any(v[1:] != v[:-1], axis=1)
        v = v[keep]
        if len(v) > 1 and np.all(v[0] == v[-1]):
            v = v[:-1]
    return np.ascontiguousarray(v[:, 0]), np.ascontiguousarray(v[:, 1])


def polygon_area(poly) -> float:
    """Unsigned shoelace area."""
    xs, ys = _poly_arrays(poly)
    if xs.size < 3:
        return 0.0
    return 0.5 * abs(float(np.dot(xs, np.roll(ys, -1)) - np.dot(ys, np.roll(xs, -1))))


def point_in_polygon(p, poly) -> bool:
    """Even-odd containment; points on the boundary count as inside."""
    xs, ys = _poly_arrays(poly)
    if xs.size == 0:
        return False
    px = np.array([float(p[0])])
    py = np.array([float(p[1])])
    return bool(_geomkern.points_in_polygon(px, py, xs, ys)[0])


def points_in_polygon(points, poly) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    xs, ys = _poly_arrays(poly)
    if xs.size == 0:
        return np.zeros(len(pts), dtype=bool)
    return np.asarray(_geomkern.points_in_polygon(
        np.ascontiguousarray(pts[:, 0]), np.ascontiguousarray(pts[:, 1]), xs, ys))


@dataclass(frozen=True)
class RasterMask:
    width: int
    height: int
    bits: np.ndarray  # (height, width) bool, read-only

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        if bits.shape != (self.height, self.width):
            raise ValueError(f"bits shape {bits.shape} != ({self.height}, {self.width})")
        bits = bits.copy()
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @property
    def area(self) -> int:
        return int(self.bits.sum())

    def is_empty(self) -> bool:
        return not self.bits.any()

    def contains(self, p) -> bool:
        """True when the pixel holding continuous point ``p`` is set."""
        i, j = math.floor(p[0]), math.floor(p[1])
        if 0 <= i < self.width and 0 <= j < self.height:
            return bool(self.bits[j, i])
        return False

    def flat(self) -> np.ndarray:
        return self.bits.reshape(-1)


def rasterize(poly, extent: ImageExtent) -> RasterMask:
    """Pixels whose centers satisfy :func:`point_in_polygon` (scanline fill)."""
    w, h = int(round(extent.width)), int(round(extent.height))
    xs, ys = _poly_arrays(poly)
    if xs.size < 3 or polygon_area(np.stack([xs, ys], 1)) == 0.0:
        return RasterMask(w, h, np.zeros((h, w), dtype=bool))
    return RasterMask(w, h, _geomkern.raster(xs, ys, w, h))


def polygon_aabb(poly) -> np.ndarray:
    v = np.asarray(poly, dtype=np.float64).reshape(-1, 2)
    return np.array([v[:, 0].min(), v[:, 1].min(), v[:, 0].max(), v[:, 1].max()])


def convex_hull(points) -> np.ndarray:
    """Andrew's monotone chain; counter-clockwise (y up), no collinear points."""
    pts = np.unique(np.asarray(points, dtype=np.float64).reshape(-1, 2), axis=0)
    if len(pts) <= 2:
        return pts

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper = []
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


@dataclass(frozen=True)
class RotatedRect:
    center: tuple
    size: tuple       # (width, height), width >= height
    angle: float      # degrees in [0, 90)
    corners: np.ndarray

    @property
    def area(self) -> float:
        return self.size[0] * self.size[1]


def _rect_at(hull, theta):
    c, s = math.cos(theta), math.sin(theta)
    u = hull @ np.array([c, s])
    v = hull @ np.array([-s, c])
    return u.min(), u.max(), v.min(), v.max()


def min_area_rect(mask: RasterMask) -> RotatedRect:
    """Minimum-area rectangle around the set pixels (rotating calipers).

    Candidate orientations are the hull edge directions plus the axis
    direction; each pixel center is padded by half a pixel so a lone pixel
    yields a 1x1 rectangle and a filled square keeps its full side length.
    """
    pts = _geomkern.row_extremes(np.ascontiguousarray(mask.bits))
    if len(pts) == 0:
        raise EmptyMask("mask has no set pixels")
    hull = convex_hull(pts)
    if len(hull) >= 2:
        edges = np.roll(hull, -1, axis=0) - hull
        thetas = np.mod(np.arctan2(edges[:, 1], edges[:, 0]), math.pi / 2)
        thetas = np.unique(np.concatenate([[0.0], thetas]))
    else:
        thetas = np.array([0.0])
    c, s = np.cos(thetas), np.sin(thetas)
    u = hull @ np.stack([c, s])           # (H, T)
    v = hull @ np.stack([-s, c])
    wu = u.max(axis=0) - u.min(axis=0) + 1.0
    wv = v.max(axis=0) - v.min(axis=0) + 1.0
    best = int(np.argmin(wu * wv))
    theta = float(thetas[best])
    u0, u1, v0, v1 = _rect_at(hull, theta)
    u0, u1, v0, v1 = u0 - 0.5, u1 + 0.5, v0 - 0.5, v1 + 0.5
    ct, st = math.cos(theta), math.sin(theta)
    ax_u = np.array([ct, st])
    ax_v = np.array([-st, ct])
    corners = np.array([ax_u * a + ax_v * b for a, b in ((u0, v0), (u1, v0), (u1, v1), (u0, v1))])
    center = tuple(((corners[0] + corners[2]) / 2).tolist())
    w, h = u1 - u0, v1 - v0
    angle = math.degrees(theta) % 90.0
    if angle >= 90.0 - 1e-12:
        angle = 0.0
    return RotatedRect(center, (max(w, h), min(w, h)), angle, corners)


def diagonal_intersection(corners) -> tuple:
    """Intersection of the two diagonals of a quadrilateral ``(4, 2)``."""
    p0, p1, p2, p3 = np.asarray(corners, dtype=np.float64)
    d1 = p2 - p0
    d2 = p3 - p1
    den = d1[0] * d2[1] - d1[1] * d2[0]
    if abs(den) < 1e-12:
        return tuple(((p0 + p2) / 2).tolist())
    t = ((p1[0] - p0[0]) * d2[1] - (p1[1] - p0[1]) * d2[0]) / den
    return tuple((p0 + t * d1).tolist())


def center_point_of(mask: RasterMask) -> Optional[tuple]:
    """Diagonal intersection of the min-area rectangle, if it falls in the mask."""
    rect = min_area_rect(mask)
    p = diagonal_intersection(rect.corners)
    return p if mask.contains(p) else None


def polygon_to_box_mask(poly, extent: ImageExtent):
    """Convenience: ``(aabb, mask)`` for a polygon annotation."""
    return polygon_aabb(poly), rasterize(poly, extent)
