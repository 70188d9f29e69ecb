"""2D geometry kernel: convex hulls, closest boundary points, inward normals,
frame transforms, and polygon distance/overlap queries.

Conventions: polygons are strictly convex with counter-clockwise vertex order,
angles are radians wrapped to (-pi, pi], distances are meters. All functions
are pure and safe to call concurrently.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

from .errors import DegenerateInput, InteriorQuery

GEOM_EPS = 1e-9
TWO_PI = 2.0 * math.pi


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    r = math.remainder(a, TWO_PI)
    if r <= -math.pi:
        r += TWO_PI
    return r


@dataclass(frozen=True, slots=True)
class Vec2:
    x: float
    y: float

    def __add__(self, o: "Vec2") -> "Vec2":
        return Vec2(self.x + o.x, self.y + o.y)

    def __sub__(self, o: "Vec2") -> "Vec2":
        return Vec2(self.x - o.x, self.y - o.y)

    def __mul__(self, s: float) -> "Vec2":
        return Vec2(self.x * s, self.y * s)

    __rmul__ = __mul__

    def __neg__(self) -> "Vec2":
        return Vec2(-self.x, -self.y)

    def dot(self, o: "Vec2") -> float:
        return self.x * o.x + self.y * o.y

    def cross(self, o: "Vec2") -> float:
        return self.x * o.y - self.y * o.x

    def norm(self) -> float:
        return math.hypot(self.x, self.y)

    def normalized(self) -> "Vec2":
        n = math.hypot(self.x, self.y)
        if n < GEOM_EPS:
            raise DegenerateInput("cannot normalize a near-zero vector")
        return Vec2(self.x / n, self.y / n)

    def perp(self) -> "Vec2":
        """Rotate 90 degrees counter-clockwise."""
        return Vec2(-self.y, self.x)

    def as_tuple(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True)
class Pose2:
    """Planar rigid pose: position in meters, yaw in radians, wrapped to (-pi, pi]."""

    position: Vec2
    yaw: float

    def __post_init__(self):
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))


def to_world(frame: Pose2, p_local: Vec2) -> Vec2:
    """Map a point from the frame's local coordinates to world coordinates."""
    c = math.cos(frame.yaw)
    s = math.sin(frame.yaw)
    return Vec2(
        frame.position.x + c * p_local.x - s * p_local.y,
        frame.position.y + s * p_local.x + c * p_local.y,
    )


def to_local(frame: Pose2, p_world: Vec2) -> Vec2:
    """Map a world point into the frame's local coordinates (inverse of to_world)."""
    c = math.cos(frame.yaw)
    s = math.sin(frame.yaw)
    dx = p_world.x - frame.position.x
    dy = p_world.y - frame.position.y
    return Vec2(c * dx + s * dy, -s * dx + c * dy)


# ---------------------------------------------------------------------------
# raw kernels on plain coordinate tuples (shared by the public API and the
# simulator hot path)
# ---------------------------------------------------------------------------

XY = tuple[float, float]


def _is_strictly_convex_ccw(pts: Sequence[XY]) -> bool:
    n = len(pts)
    if n < 3:
        return False
    for i in range(n):
        ax, ay = pts[i]
        bx, by = pts[(i + 1) % n]
        cx, cy = pts[(i + 2) % n]
        if (bx - ax) * (cy - ay) - (by - ay) * (cx - ax) <= GEOM_EPS:
            return False
    return True


def _signed_edge_distances(pts: Sequence[XY], qx: float, qy: float) -> list[float]:
    """Signed distance from q to each edge line; positive on the interior side."""
    n = len(pts)
    out = []
    for i in range(n):
        ax, ay = pts[i]
        bx, by = pts[(i + 1) % n]
        ex, ey = bx - ax, by - ay
        out.append((ex * (qy - ay) - ey * (qx - ax)) / math.hypot(ex, ey))
    return out


def _closest_boundary_raw(
    pts: Sequence[XY], qx: float, qy: float
) -> tuple[float, float, float, float, float]:
    """Closest point on the polygon boundary and its inward unit normal.

    Works for queries inside or outside the polygon. Returns
    (px, py, nx, ny, distance) where distance is the unsigned distance from q
    to the boundary. Edge interiors use the edge inward normal; vertices use
    the normalized inward bisector of the two adjacent edge normals, which
    keeps the normal continuous as a query slides around a corner.
    """
    n = len(pts)
    best_d2 = math.inf
    best_i = 0
    best_t = 0.0
    for i in range(n):
        ax, ay = pts[i]
        bx, by = pts[(i + 1) % n]
        ex, ey = bx - ax, by - ay
        ee = ex * ex + ey * ey
        t = ((qx - ax) * ex + (qy - ay) * ey) / ee
        if t < 0.0:
            t = 0.0
        elif t > 1.0:
            t = 1.0
        px = ax + t * ex
        py = ay + t * ey
        d2 = (qx - px) * (qx - px) + (qy - py) * (qy - py)
        if d2 < best_d2:
            best_d2 = d2
            best_i = i
            best_t = t
    ax, ay = pts[best_i]
    bx, by = pts[(best_i + 1) % n]
    ex, ey = bx - ax, by - ay
    el = math.hypot(ex, ey)
    px = ax + best_t * ex
    py = ay + best_t * ey
    # inward normal of a CCW edge is its left-hand perpendicular
    nx, ny = -ey / el, ex / el
    at_vertex = best_t <= GEOM_EPS or best_t >= 1.0 - GEOM_EPS
    if at_vertex:
        if best_t <= GEOM_EPS:
            j = (best_i - 1) % n
        else:
            j = (best_i + 1) % n
        jx, jy = pts[j]
        kx, ky = pts[(j + 1) % n]
        ejx, ejy = kx - jx, ky - jy
        ejl = math.hypot(ejx, ejy)
        sx = nx + (-ejy / ejl)
        sy = ny + (ejx / ejl)
        sl = math.hypot(sx, sy)
        if sl > GEOM_EPS:
            nx, ny = sx / sl, sy / sl
    return px, py, nx, ny, math.sqrt(best_d2)


def _signed_distance_raw(pts: Sequence[XY], qx: float, qy: float) -> float:
    """Signed distance to the polygon boundary; negative inside."""
    dists = _signed_edge_distances(pts, qx, qy)
    m = min(dists)
    if m >= 0.0:
        return -m
    return _closest_boundary_raw(pts, qx, qy)[4]


def _project_raw(pts: Sequence[XY], ax: float, ay: float) -> tuple[float, float]:
    lo = hi = pts[0][0] * ax + pts[0][1] * ay
    for px, py in pts:
        p = px * ax + py * ay
        if p < lo:
            lo = p
        elif p > hi:
            hi = p
    return lo, hi


def _sat_penetration_raw(
    a: Sequence[XY], b: Sequence[XY]
) -> tuple[float, float, float] | None:
    """Minimum-translation penetration of polygon a into polygon b.

    Returns (depth, ux, uy) with a unit axis that pushes a out of b, or None
    when the polygons do not overlap (touching counts as no overlap).
    """
    best = math.inf
    best_axis = (0.0, 0.0)
    for pts in (a, b):
        n = len(pts)
        for i in range(n):
            x0, y0 = pts[i]
            x1, y1 = pts[(i + 1) % n]
            ex, ey = x1 - x0, y1 - y0
            el = math.hypot(ex, ey)
            ax_, ay_ = -ey / el, ex / el
            alo, ahi = _project_raw(a, ax_, ay_)
            blo, bhi = _project_raw(b, ax_, ay_)
            overlap = min(ahi, bhi) - max(alo, blo)
            if overlap <= 0.0:
                return None
            if overlap < best:
                best = overlap
                # orient the axis so that it pushes a away from b
                ac = sum(p[0] for p in a) / len(a), sum(p[1] for p in a) / len(a)
                bc = sum(p[0] for p in b) / len(b), sum(p[1] for p in b) / len(b)
                d = (ac[0] - bc[0]) * ax_ + (ac[1] - bc[1]) * ay_
                if d >= 0.0:
                    best_axis = (ax_, ay_)
                else:
                    best_axis = (-ax_, -ay_)
    return best, best_axis[0], best_axis[1]


# ---------------------------------------------------------------------------
# public polygon API
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConvexPolygon:
    """Strictly convex polygon with counter-clockwise vertex order."""

    vertices: tuple[Vec2, ...]

    def __post_init__(self):
        pts = tuple(self.vertices)
        object.__setattr__(self, "vertices", pts)
        if len(pts) < 3:
            raise DegenerateInput("polygon needs at least 3 vertices")
        if not _is_strictly_convex_ccw([(v.x, v.y) for v in pts]):
            raise DegenerateInput("vertices are not strictly convex in CCW order")

    @classmethod
    def _unchecked(cls, vertices: tuple[Vec2, ...]) -> "ConvexPolygon":
        """Construct without convexity validation (rigid transforms of valid polygons)."""
        obj = object.__new__(cls)
        object.__setattr__(obj, "vertices", vertices)
        return obj

    @cached_property
    def _pts(self) -> list[XY]:
        return [(v.x, v.y) for v in self.vertices]

    @cached_property
    def area(self) -> float:
        a = 0.0
        pts = self._pts
        n = len(pts)
        for i in range(n):
            x0, y0 = pts[i]
            x1, y1 = pts[(i + 1) % n]
            a += x0 * y1 - x1 * y0
        return 0.5 * a

    @cached_property
    def centroid(self) -> Vec2:
        cx = cy = 0.0
        pts = self._pts
        n = len(pts)
        for i in range(n):
            x0, y0 = pts[i]
            x1, y1 = pts[(i + 1) % n]
            w = x0 * y1 - x1 * y0
            cx += (x0 + x1) * w
            cy += (y0 + y1) * w
        a6 = 6.0 * self.area
        return Vec2(cx / a6, cy / a6)

    def second_moment_per_area(self) -> float:
        """Polar second moment of area about the origin, divided by area.

        Multiply by mass to get the moment of inertia of a uniform lamina whose
        center of mass sits at the origin.
        """
        num = 0.0
        pts = self._pts
        n = len(pts)
        for i in range(n):
            x0, y0 = pts[i]
            x1, y1 = pts[(i + 1) % n]
            w = x0 * y1 - x1 * y0
            num += w * (x0 * x0 + x0 * x1 + x1 * x1 + y0 * y0 + y0 * y1 + y1 * y1)
        return (num / 12.0) / self.area

    def contains(self, q: Vec2, tol: float = 0.0) -> bool:
        """True when q is inside or on the boundary (within tol of it)."""
        pts = self._pts
        n = len(pts)
        for i in range(n):
            ax, ay = pts[i]
            bx, by = pts[(i + 1) % n]
            ex, ey = bx - ax, by - ay
            if ex * (q.y - ay) - ey * (q.x - ax) < -tol * math.hypot(ex, ey):
                return False
        return True

    def strictly_contains(self, q: Vec2) -> bool:
        return min(_signed_edge_distances(self._pts, q.x, q.y)) > GEOM_EPS

    def transformed(self, pose: Pose2) -> "ConvexPolygon":
        """Rigidly map body-frame vertices into the world frame."""
        c = math.cos(pose.yaw)
        s = math.sin(pose.yaw)
        tx, ty = pose.position.x, pose.position.y
        return ConvexPolygon._unchecked(
            tuple(
                Vec2(tx + c * v.x - s * v.y, ty + s * v.x + c * v.y)
                for v in self.vertices
            )
        )


@dataclass(frozen=True)
class ClosestPoint:
    """Closest boundary point with the hull-inward unit normal at that point."""

    point: Vec2
    inward_normal: Vec2
    distance: float


@dataclass(frozen=True)
class Footprint:
    """Object footprint: one or more convex parts in the body frame."""

    parts: tuple[ConvexPolygon, ...]

    def __post_init__(self):
        if not self.parts:
            raise DegenerateInput("footprint needs at least one part")

    @cached_property
    def circumradius(self) -> float:
        return max(v.norm() for p in self.parts for v in p.vertices)

    @cached_property
    def hull(self) -> ConvexPolygon:
        """Convex hull of all part vertices (body frame)."""
        return convex_hull([v for p in self.parts for v in p.vertices])


def convex_hull(points: Iterable[Vec2]) -> ConvexPolygon:
    """Minimal strictly convex CCW hull of a point set (monotone chain).

    Duplicate, interior, and edge-collinear points are discarded. Raises
    DegenerateInput when fewer than 3 distinct points remain or all points are
    collinear.
    """
    pts = sorted({(p.x, p.y) for p in points})
    if len(pts) < 3:
        raise DegenerateInput("need at least 3 distinct points")

    def build(seq):
        chain: list[XY] = []
        for p in seq:
            while len(chain) >= 2:
                ax, ay = chain[-2]
                bx, by = chain[-1]
                if (bx - ax) * (p[1] - ay) - (by - ay) * (p[0] - ax) <= GEOM_EPS:
                    chain.pop()
                else:
                    break
            chain.append(p)
        return chain

    lower = build(pts)
    upper = build(reversed(pts))
    hull = lower[:-1] + upper[:-1]
    if len(hull) < 3:
        raise DegenerateInput("all points are collinear")
    return ConvexPolygon(tuple(Vec2(x, y) for x, y in hull))


def closest_boundary_point(poly: ConvexPolygon, q: Vec2) -> ClosestPoint:
    """Closest boundary point to q for any query location (inside or outside)."""
    px, py, nx, ny, d = _closest_boundary_raw(poly._pts, q.x, q.y)
    return ClosestPoint(Vec2(px, py), Vec2(nx, ny), d)


def closest_hull_point(poly: ConvexPolygon, q: Vec2) -> ClosestPoint:
    """Closest boundary point and inward normal for an exterior query.

    Raises InteriorQuery when q lies strictly inside the polygon.
    """
    if poly.strictly_contains(q):
        raise InteriorQuery(f"query point ({q.x}, {q.y}) is strictly inside the polygon")
    return closest_boundary_point(poly, q)


def poly_point_distance(poly: ConvexPolygon, q: Vec2) -> float:
    """Signed distance from q to the polygon boundary; negative inside."""
    return _signed_distance_raw(poly._pts, q.x, q.y)


def poly_circle_overlap(poly: ConvexPolygon, center: Vec2, radius: float) -> bool:
    """Exact overlap test between a convex polygon and a disk."""
    return poly_point_distance(poly, center) < radius


def poly_poly_overlap(a: ConvexPolygon, b: ConvexPolygon) -> bool:
    """Exact overlap test via separating axes; touching boundaries do not overlap."""
    return _sat_penetration_raw(a._pts, b._pts) is not None


def poly_poly_penetration(
    a: ConvexPolygon, b: ConvexPolygon
) -> tuple[float, Vec2] | None:
    """Minimum translation (depth, unit axis) that moves a out of b, or None."""
    hit = _sat_penetration_raw(a._pts, b._pts)
    if hit is None:
        return None
    depth, ux, uy = hit
    return depth, Vec2(ux, uy)


def poly_poly_clearance(a: ConvexPolygon, b: ConvexPolygon) -> float:
    """Boundary-to-boundary clearance between convex polygons; 0 when overlapping."""
    if poly_poly_overlap(a, b):
        return 0.0
    best = math.inf
    for poly, other in ((a, b), (b, a)):
        for v in poly.vertices:
            d = _closest_boundary_raw(other._pts, v.x, v.y)[4]
            if d < best:
                best = d
    return best
