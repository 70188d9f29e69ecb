"""RRT path planner over square obstacles, plus polyline queries.

Planning is point-based on the object's center: obstacles are inflated by a
configurable margin and the room walls are shrunk by the same margin. The
planner runs once per episode; paths are post-processed with greedy shortcut
smoothing. Deterministic for a fixed (map, config, seed).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import NoPath, StartOrGoalBlocked
from .geom2d import Vec2
from .pushworld import Obstacle, Rect


@dataclass(frozen=True)
class MapInfo:
    bounds: Rect
    obstacles: tuple[Obstacle, ...]
    inflation: float = 0.0

    def __post_init__(self):
        if self.inflation < 0:
            raise ValueError("inflation must be non-negative")


@dataclass(frozen=True)
class RrtConfig:
    step: float = 0.5
    goal_bias: float = 0.1
    max_iters: int = 5000
    seed: int = 0


@dataclass(frozen=True)
class PathPolyline:
    """Polyline with cumulative arclengths for fast queries."""

    waypoints: tuple[Vec2, ...]

    def __post_init__(self):
        object.__setattr__(self, "waypoints", tuple(self.waypoints))
        if len(self.waypoints) < 2:
            raise ValueError("polyline needs at least 2 waypoints")
        arc = [0.0]
        for a, b in zip(self.waypoints, self.waypoints[1:]):
            seg = (b - a).norm()
            if seg <= 0.0:
                raise ValueError("polyline waypoints must be distinct")
            arc.append(arc[-1] + seg)
        object.__setattr__(self, "_arc", np.array(arc))
        pts = np.array([(p.x, p.y) for p in self.waypoints])
        object.__setattr__(self, "_pts", pts)

    @property
    def cum_arclength(self) -> np.ndarray:
        return self._arc

    @property
    def length(self) -> float:
        return float(self._arc[-1])

    def point_at(self, s: float) -> Vec2:
        """Point at arclength s, clamped to [0, length]."""
        arc = self._arc
        s = min(max(s, 0.0), float(arc[-1]))
        i = int(np.searchsorted(arc, s, side="right")) - 1
        i = min(max(i, 0), len(arc) - 2)
        t = (s - arc[i]) / (arc[i + 1] - arc[i])
        a, b = self._pts[i], self._pts[i + 1]
        return Vec2(float(a[0] + t * (b[0] - a[0])), float(a[1] + t * (b[1] - a[1])))


def _point_free(x: float, y: float, m: MapInfo) -> bool:
    if not m.bounds.contains(x, y, margin=m.inflation):
        return False
    for o in m.obstacles:
        h = o.half_extent + m.inflation
        if abs(x - o.center.x) <= h and abs(y - o.center.y) <= h:
            return False
    return True


def _segment_hits_aabb(
    ax: float, ay: float, bx: float, by: float, cx: float, cy: float, h: float
) -> bool:
    """Exact segment vs axis-aligned square test (slab method)."""
    dx, dy = bx - ax, by - ay
    t0, t1 = 0.0, 1.0
    for d, a, lo, hi in ((dx, ax, cx - h, cx + h), (dy, ay, cy - h, cy + h)):
        if d == 0.0:
            if a < lo or a > hi:
                return False
        else:
            u = (lo - a) / d
            v = (hi - a) / d
            if u > v:
                u, v = v, u
            t0 = max(t0, u)
            t1 = min(t1, v)
            if t0 > t1:
                return False
    return True


def segment_free(a: Vec2, b: Vec2, m: MapInfo) -> bool:
    """True when segment a-b clears every inflated obstacle and stays in bounds."""
    if not (_point_free(a.x, a.y, m) and _point_free(b.x, b.y, m)):
        return False
    for o in m.obstacles:
        if _segment_hits_aabb(
            a.x, a.y, b.x, b.y, o.center.x, o.center.y, o.half_extent + m.inflation
        ):
            return False
    return True


def _shortcut(points: list[Vec2], m: MapInfo) -> list[Vec2]:
    """Greedy shortcut smoothing: splice in the farthest reachable waypoint."""
    changed = True
    while changed:
        changed = False
        out = [points[0]]
        i = 0
        while i < len(points) - 1:
            j = len(points) - 1
            while j > i + 1:
                if segment_free(points[i], points[j], m):
                    break
                j -= 1
            out.append(points[j])
            if j > i + 1:
                changed = True
            i = j
        points = out
    return points


def plan_rrt(
    m: MapInfo, start: Vec2, goal: Vec2, cfg: RrtConfig = RrtConfig()
) -> PathPolyline:
    """Plan a collision-free polyline from start to goal.

    Raises StartOrGoalBlocked when either endpoint is inside an inflated
    obstacle (or outside the shrunk bounds) and NoPath when the iteration
    budget runs out before the goal is connected.
    """
    if not _point_free(start.x, start.y, m):
        raise StartOrGoalBlocked("start is not in free space")
    if not _point_free(goal.x, goal.y, m):
        raise StartOrGoalBlocked("goal is not in free space")
    if segment_free(start, goal, m):
        return PathPolyline((start, goal))

    rng = np.random.default_rng(cfg.seed)
    nodes_x = [start.x]
    nodes_y = [start.y]
    parents = [-1]
    b = m.bounds
    goal_idx = -1
    for _ in range(cfg.max_iters):
        if rng.uniform() < cfg.goal_bias:
            sx, sy = goal.x, goal.y
        else:
            sx = rng.uniform(b.xmin + m.inflation, b.xmax - m.inflation)
            sy = rng.uniform(b.ymin + m.inflation, b.ymax - m.inflation)
        dx = np.asarray(nodes_x) - sx
        dy = np.asarray(nodes_y) - sy
        near = int(np.argmin(dx * dx + dy * dy))
        nx, ny = nodes_x[near], nodes_y[near]
        dist = math.hypot(sx - nx, sy - ny)
        if dist < 1e-12:
            continue
        scale = min(1.0, cfg.step / dist)
        px = nx + (sx - nx) * scale
        py = ny + (sy - ny) * scale
        if not segment_free(Vec2(nx, ny), Vec2(px, py), m):
            continue
        nodes_x.append(px)
        nodes_y.append(py)
        parents.append(near)
        if math.hypot(goal.x - px, goal.y - py) <= cfg.step and segment_free(
            Vec2(px, py), goal, m
        ):
            nodes_x.append(goal.x)
            nodes_y.append(goal.y)
            parents.append(len(nodes_x) - 2)
            goal_idx = len(nodes_x) - 1
            break
    if goal_idx < 0:
        raise NoPath(f"no path found within {cfg.max_iters} iterations")

    chain = []
    i = goal_idx
    while i >= 0:
        chain.append(Vec2(nodes_x[i], nodes_y[i]))
        i = parents[i]
    chain.reverse()
    chain = _shortcut(chain, m)
    # drop any coincident waypoints the shortcut may leave behind
    dedup = [chain[0]]
    for p in chain[1:]:
        if (p - dedup[-1]).norm() > 1e-12:
            dedup.append(p)
    return PathPolyline(tuple(dedup))


def nearest_on_path(path: PathPolyline, q: Vec2) -> tuple[Vec2, float]:
    """Closest point on the polyline to q and its arclength."""
    pts = path._pts
    a = pts[:-1]
    d = pts[1:] - a
    seg_len2 = (d * d).sum(axis=1)
    t = ((q.x - a[:, 0]) * d[:, 0] + (q.y - a[:, 1]) * d[:, 1]) / seg_len2
    t = np.clip(t, 0.0, 1.0)
    px = a[:, 0] + t * d[:, 0]
    py = a[:, 1] + t * d[:, 1]
    dist2 = (px - q.x) ** 2 + (py - q.y) ** 2
    i = int(np.argmin(dist2))
    arc = path.cum_arclength
    s = float(arc[i] + t[i] * (arc[i + 1] - arc[i]))
    return Vec2(float(px[i]), float(py[i])), s


def resample_path(path: PathPolyline, spacing: float) -> list[Vec2]:
    """Points at arclengths 0, spacing, 2*spacing, ...; the endpoint is always included."""
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    length = path.length
    ss = list(np.arange(0.0, length, spacing))
    if not ss or length - ss[-1] > 1e-12:
        ss.append(length)
    return [path.point_at(s) for s in ss]


def _natural_cubic(knots_t: np.ndarray, knots_y: np.ndarray, ts: np.ndarray) -> np.ndarray:
    """Evaluate the natural cubic spline through (knots_t, knots_y) at ts."""
    n = len(knots_t)
    h = np.diff(knots_t)
    a = np.zeros((n, n))
    rhs = np.zeros(n)
    a[0, 0] = a[-1, -1] = 1.0
    for i in range(1, n - 1):
        a[i, i - 1] = h[i - 1]
        a[i, i] = 2.0 * (h[i - 1] + h[i])
        a[i, i + 1] = h[i]
        rhs[i] = 6.0 * (
            (knots_y[i + 1] - knots_y[i]) / h[i] - (knots_y[i] - knots_y[i - 1]) / h[i - 1]
        )
    m = np.linalg.solve(a, rhs)
    idx = np.clip(np.searchsorted(knots_t, ts, side="right") - 1, 0, n - 2)
    t0 = knots_t[idx]
    t1 = knots_t[idx + 1]
    hi = t1 - t0
    u = ts - t0
    v = t1 - ts
    return (
        m[idx] * v**3 / (6 * hi)
        + m[idx + 1] * u**3 / (6 * hi)
        + (knots_y[idx] / hi - m[idx] * hi / 6) * v
        + (knots_y[idx + 1] / hi - m[idx + 1] * hi / 6) * u
    )


def gen_reference_spline(
    start: Vec2, goal: Vec2, lateral_offsets: Sequence[float], spacing: float = 0.25
) -> PathPolyline:
    """Natural cubic spline from start to goal through intermediate control
    points placed at even fractions along the chord and offset laterally,
    resampled at fixed arclength spacing. Endpoints are exact."""
    chord = goal - start
    length = chord.norm()
    d = chord.normalized()
    normal = d.perp()
    k = len(lateral_offsets)
    pts = [start]
    for i, off in enumerate(lateral_offsets):
        f = (i + 1) / (k + 1)
        pts.append(start + d * (f * length) + normal * float(off))
    pts.append(goal)
    knots_y = np.array([(p.x, p.y) for p in pts])
    knots_t = np.concatenate(
        [[0.0], np.cumsum(np.hypot(*np.diff(knots_y, axis=0).T))]
    )
    dense_n = max(64, int(knots_t[-1] / 0.05))
    ts = np.linspace(0.0, knots_t[-1], dense_n)
    xs = _natural_cubic(knots_t, knots_y[:, 0], ts)
    ys = _natural_cubic(knots_t, knots_y[:, 1], ts)
    # exact endpoints regardless of spline evaluation rounding
    xs[0], ys[0] = start.x, start.y
    xs[-1], ys[-1] = goal.x, goal.y
    dense_pts = []
    for x, y in zip(xs, ys):
        p = Vec2(float(x), float(y))
        if not dense_pts or (p - dense_pts[-1]).norm() > 1e-9:
            dense_pts.append(p)
    dense = PathPolyline(tuple(dense_pts))
    return PathPolyline(tuple(resample_path(dense, spacing)))
