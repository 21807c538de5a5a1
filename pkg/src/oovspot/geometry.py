"""Polygon arithmetic for word regions: area, convex clipping, IoU, rescaling."""

from __future__ import annotations

import math
import warnings
from typing import Iterable, Sequence

from .errors import InvalidPolygon, InvalidScale, NonConvexInput

Point = tuple[float, float]

# Sine of the turn angle below which three vertices count as collinear.
COLLINEAR_TOL = 1e-9


class NonConvexWarning(UserWarning):
    """A non-convex polygon was replaced by its convex hull."""


def _cross(o: Point, a: Point, b: Point) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _signed_area(pts: Sequence[Point]) -> float:
    s = 0.0
    x0, y0 = pts[-1]
    for x1, y1 in pts:
        s += x0 * y1 - x1 * y0
        x0, y0 = x1, y1
    return s / 2.0


def _segments_touch(p1: Point, p2: Point, q1: Point, q2: Point) -> bool:
    d1 = _cross(q1, q2, p1)
    d2 = _cross(q1, q2, p2)
    d3 = _cross(p1, p2, q1)
    d4 = _cross(p1, p2, q2)
    if ((d1 > 0 and d2 < 0) or (d1 < 0 and d2 > 0)) and (
        (d3 > 0 and d4 < 0) or (d3 < 0 and d4 > 0)
    ):
        return True

    def on_segment(a: Point, b: Point, c: Point) -> bool:
        return min(a[0], b[0]) <= c[0] <= max(a[0], b[0]) and min(a[1], b[1]) <= c[1] <= max(
            a[1], b[1]
        )

    return (
        (d1 == 0 and on_segment(q1, q2, p1))
        or (d2 == 0 and on_segment(q1, q2, p2))
        or (d3 == 0 and on_segment(p1, p2, q1))
        or (d4 == 0 and on_segment(p1, p2, q2))
    )


def _is_simple(pts: Sequence[Point]) -> bool:
    n = len(pts)
    edges = [(pts[i], pts[(i + 1) % n]) for i in range(n)]
    for i in range(n):
        a, b = edges[i]
        c = edges[(i + 1) % n][1]
        # adjacent edges folding back onto each other
        if _cross(a, b, c) == 0 and (b[0] - a[0]) * (c[0] - b[0]) + (b[1] - a[1]) * (c[1] - b[1]) < 0:
            return False
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue
            if _segments_touch(a, b, *edges[j]):
                return False
    return True


def _turns_left(pts: Sequence[Point]) -> bool:
    n = len(pts)
    for i in range(n):
        o, a, b = pts[i - 1], pts[i], pts[(i + 1) % n]
        ex, ey = a[0] - o[0], a[1] - o[1]
        fx, fy = b[0] - a[0], b[1] - a[1]
        cross = ex * fy - ey * fx
        if cross < -COLLINEAR_TOL * math.hypot(ex, ey) * math.hypot(fx, fy):
            return False
    return True


class Polygon:
    """Simple polygon stored counter-clockwise.

    Construction validates the vertex list and raises ``InvalidPolygon`` for
    fewer than three distinct vertices, non-finite coordinates, self
    intersection or zero area. Repeated consecutive vertices are collapsed.
    Instances are treated as immutable.
    """

    __slots__ = ("vertices", "area", "bounds", "convex")

    vertices: tuple[Point, ...]
    area: float
    bounds: tuple[float, float, float, float]
    convex: bool

    def __init__(self, vertices: Iterable[Sequence[float]]):
        pts: list[Point] = []
        for v in vertices:
            if len(v) != 2:
                raise InvalidPolygon(f"vertex {v!r} is not an (x, y) pair")
            x, y = float(v[0]), float(v[1])
            if not (math.isfinite(x) and math.isfinite(y)):
                raise InvalidPolygon(f"non-finite vertex ({x}, {y})")
            if pts and pts[-1] == (x, y):
                continue
            pts.append((x, y))
        while len(pts) > 1 and pts[0] == pts[-1]:
            pts.pop()
        if len(pts) < 3:
            raise InvalidPolygon(f"need at least 3 distinct vertices, got {len(pts)}")
        signed = _signed_area(pts)
        if not abs(signed) > 0:
            raise InvalidPolygon("polygon has zero area")
        if signed < 0:
            pts = [pts[0]] + pts[:0:-1]
        if not _is_simple(pts):
            raise InvalidPolygon("polygon edges self-intersect")
        xs = [p[0] for p in pts]
        ys = [p[1] for p in pts]
        self.vertices = tuple(pts)
        self.area = abs(signed)
        self.bounds = (min(xs), min(ys), max(xs), max(ys))
        self.convex = _turns_left(pts)

    @classmethod
    def from_flat(cls, coords: Sequence[float]) -> "Polygon":
        if len(coords) % 2:
            raise InvalidPolygon("odd number of coordinates")
        return cls(zip(coords[0::2], coords[1::2]))

    @classmethod
    def box(cls, x1: float, y1: float, x2: float, y2: float) -> "Polygon":
        return cls([(x1, y1), (x2, y1), (x2, y2), (x1, y2)])

    def __len__(self) -> int:
        return len(self.vertices)

    def __iter__(self):
        return iter(self.vertices)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Polygon):
            return NotImplemented
        return self.vertices == other.vertices

    def __hash__(self) -> int:
        return hash(self.vertices)

    def __repr__(self) -> str:
        return f"Polygon({list(self.vertices)!r})"

    def translated(self, dx: float, dy: float) -> "Polygon":
        return Polygon((x + dx, y + dy) for x, y in self.vertices)

    def scaled(self, factor: float) -> "Polygon":
        return Polygon((x * factor, y * factor) for x, y in self.vertices)

    def to_list(self) -> list[list[float]]:
        return [[x, y] for x, y in self.vertices]

    def convex_hull(self) -> "Polygon":
        if self.convex:
            return self
        return Polygon(convex_hull(self.vertices))


def convex_hull(points: Iterable[Point]) -> list[Point]:
    """Monotone-chain hull, counter-clockwise, collinear points dropped."""
    pts = sorted(set(points))
    if len(pts) < 3:
        return pts
    lower: list[Point] = []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list[Point] = []
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return lower[:-1] + upper[:-1]


def polygon_area(p: Polygon) -> float:
    return p.area


def as_convex(p: Polygon, strict: bool) -> Polygon:
    if p.convex:
        return p
    if strict:
        raise NonConvexInput(f"non-convex polygon {p!r}")
    warnings.warn(f"non-convex polygon replaced by its convex hull: {p!r}", NonConvexWarning, stacklevel=3)
    return p.convex_hull()


def clip_convex(subject: Sequence[Point], clip: Sequence[Point]) -> list[Point]:
    """Clip ``subject`` against every edge half-plane of convex CCW ``clip``."""
    output = list(subject)
    px, py = clip[-1]
    for qx, qy in clip:
        if not output:
            break
        ex, ey = qx - px, qy - py
        inp = output
        output = []
        sx, sy = inp[-1]
        ds = ex * (sy - py) - ey * (sx - px)
        for cx, cy in inp:
            dc = ex * (cy - py) - ey * (cx - px)
            if dc >= 0:
                if ds < 0:
                    t = ds / (ds - dc)
                    output.append((sx + t * (cx - sx), sy + t * (cy - sy)))
                output.append((cx, cy))
            elif ds >= 0:
                if ds > 0:
                    t = ds / (ds - dc)
                    output.append((sx + t * (cx - sx), sy + t * (cy - sy)))
            sx, sy, ds = cx, cy, dc
        px, py = qx, qy
    return output


def _bounds_overlap(a: Polygon, b: Polygon) -> bool:
    ax1, ay1, ax2, ay2 = a.bounds
    bx1, by1, bx2, by2 = b.bounds
    return ax1 < bx2 and bx1 < ax2 and ay1 < by2 and by1 < ay2


def _convex_intersection(a: Polygon, b: Polygon) -> float:
    if not _bounds_overlap(a, b):
        return 0.0
    if a.vertices == b.vertices:
        return a.area
    clipped = clip_convex(a.vertices, b.vertices)
    if len(clipped) < 3:
        return 0.0
    return min(abs(_signed_area(clipped)), a.area, b.area)


def intersection_area(a: Polygon, b: Polygon, strict: bool = False) -> float:
    """Area of ``a`` ∩ ``b``.

    Non-convex inputs are replaced by their hulls (with a ``NonConvexWarning``)
    unless ``strict`` is set, in which case ``NonConvexInput`` is raised.
    """
    return _convex_intersection(as_convex(a, strict), as_convex(b, strict))


def convex_iou(a: Polygon, b: Polygon) -> float:
    """IoU of two polygons already known to be convex."""
    inter = _convex_intersection(a, b)
    if inter <= 0.0:
        return 0.0
    return min(1.0, inter / (a.area + b.area - inter))


def iou(a: Polygon, b: Polygon, strict: bool = False) -> float:
    return convex_iou(as_convex(a, strict), as_convex(b, strict))


def axis_aligned_iou(a: Polygon, b: Polygon) -> float:
    """IoU of the two polygons' axis-aligned bounding rectangles."""
    ax1, ay1, ax2, ay2 = a.bounds
    bx1, by1, bx2, by2 = b.bounds
    w = min(ax2, bx2) - max(ax1, bx1)
    h = min(ay2, by2) - max(ay1, by1)
    if w <= 0 or h <= 0:
        return 0.0
    inter = w * h
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return inter / union


def _check_scale(value: float, name: str) -> None:
    if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
        raise InvalidScale(f"{name} must be a positive finite number, got {value!r}")


def rescale_polygon(p: Polygon, from_scale: float, to_scale: float) -> Polygon:
    """Map ``p`` from an image whose longer side is ``from_scale`` pixels to one
    whose longer side is ``to_scale`` pixels (aspect ratio preserved)."""
    _check_scale(from_scale, "from_scale")
    _check_scale(to_scale, "to_scale")
    if from_scale == to_scale:
        return p
    return Polygon((x * to_scale / from_scale, y * to_scale / from_scale) for x, y in p.vertices)
