"""Deterministic fixed-step 2D pushing simulator.

Kinematic disk robots track commanded body velocities with a first-order lag
and exert penalty contact forces (with Coulomb tangential friction) on a rigid
object sliding on the ground. Axis-aligned square obstacles and the room walls
block the object via positional projection. Robot-robot and robot-obstacle
overlaps raise terminal exceptions.

Everything is deterministic given (world, command sequence); the RNG stream
attached to a world is consumed only by resets and friction randomization.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import BadCommand, SingleAgent
from .geom2d import (
    ConvexPolygon,
    Footprint,
    Pose2,
    Vec2,
    _closest_boundary_raw,
    _sat_penetration_raw,
    _signed_edge_distances,
    wrap_angle,
)

DT = 0.02  # 50 Hz control rate

# command bounds: |vx|, |vy| <= 0.5 m/s, |vyaw| <= 1.0 rad/s
ACTION_BOUNDS = (0.5, 0.5, 1.0)
ROBOT_RADIUS = 0.35


@dataclass(frozen=True)
class SimParams:
    """Contact and friction constants. All values are config keys."""

    vel_time_constant: float = 0.1  # s, first-order command tracking lag
    contact_stiffness: float = 800.0  # N/m penalty spring
    damping_ratio: float = 0.35  # fraction of critical contact damping
    contact_force_max: float = 28.0  # N, cap on one robot's normal force
    contact_mu: float = 0.6  # Coulomb cap on tangential force (randomized)
    g_damp: float = 9.81  # 1/s ground velocity decay scale
    g_dry: float = 7.0  # m/s^2 dry (Coulomb) ground deceleration
    angular_dry_factor: float = 2.0 / 3.0  # scales dry decay applied to spin
    max_robot_penetration: float = 0.08  # m, anti-tunnel clamp for robots
    projection_eps: float = 1e-9  # extra separation applied by projections


class ExceptionKind(enum.Enum):
    ROBOT_ROBOT_COLLISION = "robot_robot_collision"
    ROBOT_OBSTACLE_COLLISION = "robot_obstacle_collision"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class StepEvents:
    """Per-step exception set and per-robot object-contact flags."""

    exceptions: frozenset[ExceptionKind]
    contacts: tuple[bool, ...]

    @property
    def failed(self) -> bool:
        return bool(self.exceptions)


@dataclass(frozen=True)
class RobotState:
    pose: Pose2
    body_vel: tuple[float, float, float] = (0.0, 0.0, 0.0)
    radius: float = ROBOT_RADIUS
    cmd: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def world_vel(self) -> tuple[float, float]:
        c = math.cos(self.pose.yaw)
        s = math.sin(self.pose.yaw)
        vx, vy = self.body_vel[0], self.body_vel[1]
        return (c * vx - s * vy, s * vx + c * vy)


@dataclass(frozen=True)
class ObjectBody:
    footprint: Footprint
    pose: Pose2
    lin_vel: Vec2 = Vec2(0.0, 0.0)
    ang_vel: float = 0.0
    mass: float = 4.0
    inertia: float = 1.0
    mu_ground: float = 0.5
    mu_contact: float = 0.6

    def __post_init__(self):
        if self.mass <= 0 or self.inertia <= 0:
            raise ValueError("mass and inertia must be positive")
        if not (0.2 <= self.mu_ground <= 1.0):
            raise ValueError("mu_ground must lie in [0.2, 1.0]")


@dataclass(frozen=True)
class Obstacle:
    """Axis-aligned 1.0 m x 1.0 m square."""

    center: Vec2
    half_extent: float = 0.5

    def corners(self) -> list[tuple[float, float]]:
        cx, cy, h = self.center.x, self.center.y, self.half_extent
        return [(cx - h, cy - h), (cx + h, cy - h), (cx + h, cy + h), (cx - h, cy + h)]

    def polygon(self) -> ConvexPolygon:
        return ConvexPolygon(tuple(Vec2(x, y) for x, y in self.corners()))


@dataclass(frozen=True)
class Rect:
    """Room bounds."""

    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def contains(self, x: float, y: float, margin: float = 0.0) -> bool:
        return (
            self.xmin + margin <= x <= self.xmax - margin
            and self.ymin + margin <= y <= self.ymax - margin
        )


@dataclass
class WorldState:
    """Full simulation state. Treated as immutable; step() returns a new one.

    `step_count * DT` is the episode clock, so time is always an exact
    multiple of the step size.
    """

    robots: tuple[RobotState, ...]
    object: ObjectBody
    obstacles: tuple[Obstacle, ...] = ()
    bounds: Rect = Rect(-12.0, -12.0, 12.0, 12.0)
    step_count: int = 0
    sim: SimParams = field(default_factory=SimParams)
    rng_name: str = "world"
    rng: np.random.Generator | None = None

    @property
    def time(self) -> float:
        return self.step_count * DT

    @cached_property
    def world_parts(self) -> list[list[tuple[float, float]]]:
        """Object part vertices in the world frame."""
        c = math.cos(self.object.pose.yaw)
        s = math.sin(self.object.pose.yaw)
        tx, ty = self.object.pose.position.x, self.object.pose.position.y
        return [
            [(tx + c * v.x - s * v.y, ty + s * v.x + c * v.y) for v in part.vertices]
            for part in self.object.footprint.parts
        ]

    @cached_property
    def world_hull(self) -> ConvexPolygon:
        return self.object.footprint.hull.transformed(self.object.pose)


def _check_cmd(cmd: Sequence[float]) -> tuple[float, float, float]:
    if len(cmd) != 3:
        raise BadCommand(f"command must have 3 components, got {len(cmd)}")
    vx, vy, vyaw = float(cmd[0]), float(cmd[1]), float(cmd[2])
    if not (math.isfinite(vx) and math.isfinite(vy) and math.isfinite(vyaw)):
        raise BadCommand("command contains non-finite values")
    tol = 1e-9
    if abs(vx) > ACTION_BOUNDS[0] + tol or abs(vy) > ACTION_BOUNDS[1] + tol or abs(vyaw) > ACTION_BOUNDS[2] + tol:
        raise BadCommand(f"command ({vx}, {vy}, {vyaw}) outside action bounds {ACTION_BOUNDS}")
    return vx, vy, vyaw


def clamp_cmd(cmd: Sequence[float]) -> tuple[float, float, float]:
    """Clip a raw command triple to the action bounds."""
    return (
        min(max(float(cmd[0]), -ACTION_BOUNDS[0]), ACTION_BOUNDS[0]),
        min(max(float(cmd[1]), -ACTION_BOUNDS[1]), ACTION_BOUNDS[1]),
        min(max(float(cmd[2]), -ACTION_BOUNDS[2]), ACTION_BOUNDS[2]),
    )


def _disk_part_contact(pts, qx, qy, radius):
    """Contact of a disk against one convex part.

    Returns (penetration, outward_nx, outward_ny, px, py) or None. The outward
    normal points from the object surface toward the robot center and stays
    meaningful when the disk center is inside the part.
    """
    inside = min(_signed_edge_distances(pts, qx, qy)) > 0.0
    px, py, inx, iny, dist = _closest_boundary_raw(pts, qx, qy)
    if inside:
        return radius + dist, -inx, -iny, px, py
    if dist >= radius:
        return None
    if dist > 1e-12:
        return radius - dist, (qx - px) / dist, (qy - py) / dist, px, py
    return radius, -inx, -iny, px, py


def step(
    world: WorldState, cmds: Sequence[Sequence[float]], dt: float = DT
) -> tuple[WorldState, StepEvents]:
    """Advance the world by one control period.

    Robots first update their body velocity toward the command with a
    first-order lag, then integrate their pose. Robot-object penetrations
    produce a capped penalty force along the contact normal plus Coulomb
    tangential friction; the object integrates semi-implicit Euler with ground
    friction applied as an exponential velocity decay plus a dry Coulomb
    decrement. Object-obstacle and object-wall penetrations are resolved by
    positional projection. Robot-robot or robot-obstacle overlap raises the
    corresponding exception in the returned events.
    """
    if len(cmds) != len(world.robots):
        raise BadCommand(f"expected {len(world.robots)} commands, got {len(cmds)}")
    p = world.sim
    obj = world.object

    # robots: first-order velocity tracking, then pose integration
    lag = math.exp(-dt / p.vel_time_constant)
    new_robots = []
    for rob, cmd in zip(world.robots, cmds):
        cx, cy, cyaw = _check_cmd(cmd)
        bvx = cx + (rob.body_vel[0] - cx) * lag
        bvy = cy + (rob.body_vel[1] - cy) * lag
        bvyaw = cyaw + (rob.body_vel[2] - cyaw) * lag
        c = math.cos(rob.pose.yaw)
        s = math.sin(rob.pose.yaw)
        nx = rob.pose.position.x + (c * bvx - s * bvy) * dt
        ny = rob.pose.position.y + (s * bvx + c * bvy) * dt
        nyaw = wrap_angle(rob.pose.yaw + bvyaw * dt)
        new_robots.append(
            replace(rob, pose=Pose2(Vec2(nx, ny), nyaw), body_vel=(bvx, bvy, bvyaw), cmd=(cx, cy, cyaw))
        )

    # robot-object contacts -> force and torque on the object
    parts = world.world_parts
    ox, oy = obj.pose.position.x, obj.pose.position.y
    ovx, ovy = obj.lin_vel.x, obj.lin_vel.y
    om = obj.ang_vel
    fx = fy = torque = 0.0
    contacts = [False] * len(new_robots)
    damping = p.damping_ratio * 2.0 * math.sqrt(p.contact_stiffness * obj.mass)
    for i, rob in enumerate(new_robots):
        qx, qy = rob.pose.position.x, rob.pose.position.y
        rvx, rvy = rob.world_vel()
        for pts in parts:
            hit = _disk_part_contact(pts, qx, qy, rob.radius)
            if hit is None:
                continue
            pen, nx, ny, px, py = hit
            contacts[i] = True
            # object surface velocity at the contact point
            rx, ry = px - ox, py - oy
            svx = ovx - om * ry
            svy = ovy + om * rx
            approach = (rvx - svx) * (-nx) + (rvy - svy) * (-ny)
            fn = p.contact_stiffness * pen + damping * approach
            if fn <= 0.0:
                continue
            if fn > p.contact_force_max:
                fn = p.contact_force_max
            # tangential Coulomb friction, viscous-capped to avoid chatter
            tx_, ty_ = -ny, nx
            slip = (rvx - svx) * tx_ + (rvy - svy) * ty_
            ft = damping * slip
            cap = obj.mu_contact * fn
            if ft > cap:
                ft = cap
            elif ft < -cap:
                ft = -cap
            cfx = -nx * fn + tx_ * ft
            cfy = -ny * fn + ty_ * ft
            fx += cfx
            fy += cfy
            torque += rx * cfy - ry * cfx

    # object: semi-implicit Euler with ground friction
    ovx += fx / obj.mass * dt
    ovy += fy / obj.mass * dt
    om += torque / obj.inertia * dt
    decay = math.exp(-obj.mu_ground * p.g_damp * dt)
    ovx *= decay
    ovy *= decay
    om *= decay
    speed = math.hypot(ovx, ovy)
    dry = obj.mu_ground * p.g_dry * dt
    if speed <= dry:
        ovx = ovy = 0.0
    else:
        k = (speed - dry) / speed
        ovx *= k
        ovy *= k
    r_gyr = math.sqrt(obj.inertia / obj.mass)
    dry_ang = p.angular_dry_factor * obj.mu_ground * p.g_dry / r_gyr * dt
    if abs(om) <= dry_ang:
        om = 0.0
    else:
        om -= math.copysign(dry_ang, om)
    nox = ox + ovx * dt
    noy = oy + ovy * dt
    noyaw = wrap_angle(obj.pose.yaw + om * dt)

    # project the object out of obstacles and walls
    body_parts = world.object.footprint.parts
    for _ in range(10):
        c = math.cos(noyaw)
        s = math.sin(noyaw)
        wparts = [
            [(nox + c * v.x - s * v.y, noy + s * v.x + c * v.y) for v in part.vertices]
            for part in body_parts
        ]
        moved = False
        for obst in world.obstacles:
            bc = obst.corners()
            for pts in wparts:
                hit = _sat_penetration_raw(pts, bc)
                if hit is None:
                    continue
                depth, ux, uy = hit
                shift = depth + p.projection_eps
                nox += ux * shift
                noy += uy * shift
                vn = ovx * ux + ovy * uy
                if vn < 0.0:
                    ovx -= vn * ux
                    ovy -= vn * uy
                moved = True
                break
            if moved:
                break
        if moved:
            continue
        xs = [x for pts in wparts for x, _ in pts]
        ys = [y for pts in wparts for _, y in pts]
        b = world.bounds
        dx = dy = 0.0
        if min(xs) < b.xmin:
            dx = b.xmin - min(xs) + p.projection_eps
            ovx = max(ovx, 0.0)
        elif max(xs) > b.xmax:
            dx = b.xmax - max(xs) - p.projection_eps
            ovx = min(ovx, 0.0)
        if min(ys) < b.ymin:
            dy = b.ymin - min(ys) + p.projection_eps
            ovy = max(ovy, 0.0)
        elif max(ys) > b.ymax:
            dy = b.ymax - max(ys) - p.projection_eps
            ovy = min(ovy, 0.0)
        if dx or dy:
            nox += dx
            noy += dy
            continue
        break

    new_object = replace(
        world.object,
        pose=Pose2(Vec2(nox, noy), noyaw),
        lin_vel=Vec2(ovx, ovy),
        ang_vel=om,
    )

    # anti-tunnel clamp: robots may not sink deeper than max_robot_penetration
    c = math.cos(noyaw)
    s = math.sin(noyaw)
    wparts = [
        [(nox + c * v.x - s * v.y, noy + s * v.x + c * v.y) for v in part.vertices]
        for part in body_parts
    ]
    final_robots = []
    for rob in new_robots:
        qx, qy = rob.pose.position.x, rob.pose.position.y
        for pts in wparts:
            hit = _disk_part_contact(pts, qx, qy, rob.radius)
            if hit is not None and hit[0] > p.max_robot_penetration:
                pen, nx, ny = hit[0], hit[1], hit[2]
                push = pen - p.max_robot_penetration
                qx += nx * push
                qy += ny * push
        b = world.bounds
        qx = min(max(qx, b.xmin + rob.radius), b.xmax - rob.radius)
        qy = min(max(qy, b.ymin + rob.radius), b.ymax - rob.radius)
        if qx != rob.pose.position.x or qy != rob.pose.position.y:
            rob = replace(rob, pose=Pose2(Vec2(qx, qy), rob.pose.yaw))
        final_robots.append(rob)

    # exceptions
    exceptions = set()
    n = len(final_robots)
    for i in range(n):
        pi = final_robots[i].pose.position
        for j in range(i + 1, n):
            pj = final_robots[j].pose.position
            if math.hypot(pi.x - pj.x, pi.y - pj.y) < final_robots[i].radius + final_robots[j].radius:
                exceptions.add(ExceptionKind.ROBOT_ROBOT_COLLISION)
        for obst in world.obstacles:
            sd = _signed_distance_point_aabb(pi.x, pi.y, obst)
            if sd < final_robots[i].radius:
                exceptions.add(ExceptionKind.ROBOT_OBSTACLE_COLLISION)

    new_world = replace(
        world,
        robots=tuple(final_robots),
        object=new_object,
        step_count=world.step_count + 1,
    )
    return new_world, StepEvents(frozenset(exceptions), tuple(contacts))


def _signed_distance_point_aabb(x: float, y: float, obst: Obstacle) -> float:
    dx = abs(x - obst.center.x) - obst.half_extent
    dy = abs(y - obst.center.y) - obst.half_extent
    if dx > 0.0 or dy > 0.0:
        return math.hypot(max(dx, 0.0), max(dy, 0.0))
    return max(dx, dy)


def randomize_friction(
    world: WorldState,
    rng: np.random.Generator,
    lo: float = 0.2,
    hi: float = 1.0,
) -> WorldState:
    """Draw mu_ground ~ U[lo, hi] and the contact coefficient ~ U[0.3, 0.9]."""
    if not lo < hi:
        raise ValueError("need lo < hi")
    mu_ground = float(rng.uniform(lo, hi))
    mu_contact = float(rng.uniform(0.3, 0.9))
    return replace(
        world, object=replace(world.object, mu_ground=mu_ground, mu_contact=mu_contact)
    )


def min_robot_separation(world: WorldState) -> np.ndarray:
    """Symmetric matrix of surface separations: center distance minus radii, floored at 0."""
    n = len(world.robots)
    if n < 2:
        raise SingleAgent("separation matrix needs at least two robots")
    out = np.zeros((n, n))
    for i in range(n):
        pi = world.robots[i].pose.position
        for j in range(i + 1, n):
            pj = world.robots[j].pose.position
            d = math.hypot(pi.x - pj.x, pi.y - pj.y)
            d = max(0.0, d - world.robots[i].radius - world.robots[j].radius)
            out[i, j] = out[j, i] = d
    return out


# ---------------------------------------------------------------------------
# trajectory snapshot export
# ---------------------------------------------------------------------------


def snapshot_header(n_robots: int) -> list[str]:
    """CSV column order for world snapshots (one row per step)."""
    cols = ["t"]
    for i in range(n_robots):
        cols += [
            f"r{i}_x",
            f"r{i}_y",
            f"r{i}_yaw",
            f"r{i}_cmd_vx",
            f"r{i}_cmd_vy",
            f"r{i}_cmd_vyaw",
        ]
    cols += ["obj_x", "obj_y", "obj_yaw", "sub_x", "sub_y"]
    return cols


def snapshot_row(world: WorldState, subgoal: Vec2) -> list[float]:
    row = [world.time]
    for rob in world.robots:
        row += [
            rob.pose.position.x,
            rob.pose.position.y,
            rob.pose.yaw,
            rob.cmd[0],
            rob.cmd[1],
            rob.cmd[2],
        ]
    row += [
        world.object.pose.position.x,
        world.object.pose.position.y,
        world.object.pose.yaw,
        subgoal.x,
        subgoal.y,
    ]
    return row
