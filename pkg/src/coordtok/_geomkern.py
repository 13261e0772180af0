"""Raster / containment kernels.  ``*_nb`` are numba loops, ``*_np`` numpy."""
import numpy as np

from ._accel import njit, pick


@njit
def _raster_nb(xs, ys, width, height):
    n = xs.shape[0]
    out = np.zeros((height, width), dtype=np.bool_)
    xint = np.empty(n, dtype=np.float64)
    for j in range(height):
        yc = j + 0.5
        k = 0
        for a in range(n):
            b = a + 1 if a + 1 < n else 0
            ya = ys[a]
            yb = ys[b]
            if (ya > yc) != (yb > yc):
                xint[k] = xs[a] + (yc - ya) * (xs[b] - xs[a]) / (yb - ya)
                k += 1
        if k >= 2:
            xi = np.sort(xint[:k])
            for p in range(0, k - 1, 2):
                lo = int(np.ceil(xi[p] - 0.5))
                hi = int(np.floor(xi[p + 1] - 0.5))
                if lo < 0:
                    lo = 0
                if hi > width - 1:
                    hi = width - 1
                for i in range(lo, hi + 1):
                    out[j, i] = True
        # boundary pixels the half-open crossing rule can miss
        for a in range(n):
            b = a + 1 if a + 1 < n else 0
            if ys[a] == yc and ys[b] == yc:
                x0 = min(xs[a], xs[b])
                x1 = max(xs[a], xs[b])
                lo = max(int(np.ceil(x0 - 0.5)), 0)
                hi = min(int(np.floor(x1 - 0.5)), width - 1)
                for i in range(lo, hi + 1):
                    out[j, i] = True
            elif ys[a] == yc:
                i = xs[a] - 0.5
                if i == np.floor(i) and 0 <= i < width:
                    out[j, int(i)] = True
    return out


def _raster_np(xs, ys, width, height):
    out = np.zeros((height, width), dtype=bool)
    xa, ya = xs, ys
    xb, yb = np.roll(xs, -1), np.roll(ys, -1)
    centers = np.arange(width) + 0.5
    ymin = max(int(np.floor(ys.min())) - 1, 0)
    ymax = min(int(np.ceil(ys.max())) + 1, height)
    with np.errstate(divide="ignore", invalid="ignore"):
        for j in range(ymin, ymax):
            yc = j + 0.5
            cross = (ya > yc) != (yb > yc)
            xi = np.sort(xa[cross] + (yc - ya[cross]) * (xb[cross] - xa[cross]) / (yb[cross] - ya[cross]))
            if xi.size:
                left = np.searchsorted(xi, centers, side="left")
                right = np.searchsorted(xi, centers, side="right")
                out[j] = (left % 2 == 1) | (right > left)
            horiz = (ya == yc) & (yb == yc)
            for a in np.flatnonzero(horiz):
                lo, hi = min(xa[a], xb[a]), max(xa[a], xb[a])
                out[j] |= (centers >= lo) & (centers <= hi)
            on_vertex = (ya == yc) & (xa - 0.5 == np.floor(xa - 0.5)) & (xa >= 0.5) & (xa - 0.5 < width)
            out[j, (xa[on_vertex] - 0.5).astype(np.int64)] = True
    return out


@njit
def _pip_nb(px, py, xs, ys):
    m = px.shape[0]
    n = xs.shape[0]
    out = np.zeros(m, dtype=np.bool_)
    for q in range(m):
        x = px[q]
        y = py[q]
        inside = False
        on_edge = False
        for a in range(n):
            b = a + 1 if a + 1 < n else 0
            xa = xs[a]
            ya = ys[a]
            xb = xs[b]
            yb = ys[b]
            cross = (xb - xa) * (y - ya) - (yb - ya) * (x - xa)
            if (cross == 0.0 and min(xa, xb) <= x <= max(xa, xb)
                    and min(ya, yb) <= y <= max(ya, yb)):
                on_edge = True
                break
            if (ya > y) != (yb > y):
                xint = xa + (y - ya) * (xb - xa) / (yb - ya)
                if x < xint:
                    inside = not inside
        out[q] = on_edge or inside
    return out


def _pip_np(px, py, xs, ys):
    xa, ya = xs[None, :], ys[None, :]
    xb, yb = np.roll(xs, -1)[None, :], np.roll(ys, -1)[None, :]
    x, y = px[:, None], py[:, None]
    cross = (xb - xa) * (y - ya) - (yb - ya) * (x - xa)
    on_edge = ((cross == 0) & (np.minimum(xa, xb) <= x) & (x <= np.maximum(xa, xb))
               & (np.minimum(ya, yb) <= y) & (y <= np.maximum(ya, yb))).any(axis=1)
    straddle = (ya > y) != (yb > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xint = xa + (y - ya) * (xb - xa) / (yb - ya)
    hits = (straddle & (x < xint)).sum(axis=1)
    return on_edge | (hits % 2 == 1)


@njit
def _row_extremes_nb(bits):
    h, w = bits.shape
    pts = np.empty((2 * h, 2), dtype=np.float64)
    k = 0
    for j in range(h):
        lo = -1
        hi = -1
        for i in range(w):
            if bits[j, i]:
                if lo < 0:
                    lo = i
                hi = i
        if lo >= 0:
            pts[k, 0] = lo + 0.5
            pts[k, 1] = j + 0.5
            k += 1
            if hi != lo:
                pts[k, 0] = hi + 0.5
                pts[k, 1] = j + 0.5
                k += 1
    return pts[:k]


def _row_extremes_np(bits):
    rows = np.flatnonzero(bits.any(axis=1))
    if rows.size == 0:
        return np.zeros((0, 2))
    sub = bits[rows]
    lo = sub.argmax(axis=1)
    hi = sub.shape[1] - 1 - sub[:, ::-1].argmax(axis=1)
    y = rows + 0.5
    first = np.stack([lo + 0.5, y], axis=1)
    second = np.stack([hi + 0.5, y], axis=1)[hi != lo]
    # interleave to match the loop order of the numba kernel
    pts = []
    si = 0
    for r in range(rows.size):
        pts.append(first[r])
        if hi[r] != lo[r]:
            pts.append(second[si])
            si += 1
    return np.asarray(pts, dtype=np.float64)


raster = pick(_raster_nb, _raster_np)
points_in_polygon = pick(_pip_nb, _pip_np)
row_extremes = pick(_row_extremes_nb, _row_extremes_np)
