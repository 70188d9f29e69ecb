"""Scenario definitions: objects, spawn distributions, rooms and obstacles,
local-frame observation construction, subgoal handling, and termination.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import NoPath, SpawnCollision
from .geom2d import (
    ConvexPolygon,
    Footprint,
    Pose2,
    Vec2,
    to_local,
    wrap_angle,
)
from .planner import MapInfo, PathPolyline, RrtConfig, gen_reference_spline, plan_rrt
from .pushworld import (
    ExceptionKind,
    ObjectBody,
    Obstacle,
    Rect,
    RobotState,
    StepEvents,
    WorldState,
    randomize_friction,
)

POS_NORM = 10.0  # observation positions are divided by this
OBSTACLE_PAD = 10.0  # pre-normalization padding slot for absent obstacles
N_OBS_MID = 4  # nearest obstacles in a mid-level observation
N_OBS_HIGH = 6  # nearest obstacles in a high-level observation
N_PATH_POINTS = 8
PATH_POINT_SPACING = 0.75
SUBGOAL_RADIUS_MIN = 0.25
SUBGOAL_RADIUS_MAX = 3.0
ROOM = Rect(-12.0, -12.0, 12.0, 12.0)


class ObjectKind(enum.Enum):
    CUBOID = "cuboid"
    TSHAPE = "tshape"
    CYLINDER = "cylinder"


def _rect_poly(w: float, h: float, cx: float = 0.0, cy: float = 0.0) -> ConvexPolygon:
    return ConvexPolygon(
        (
            Vec2(cx - w / 2, cy - h / 2),
            Vec2(cx + w / 2, cy - h / 2),
            Vec2(cx + w / 2, cy + h / 2),
            Vec2(cx - w / 2, cy + h / 2),
        )
    )


def make_footprint(kind: ObjectKind, size: float = 0.0) -> Footprint:
    """Body-frame footprint with the center of mass at the origin."""
    if kind is ObjectKind.CUBOID:
        side = size or 1.2
        return Footprint((_rect_poly(side, side),))
    if kind is ObjectKind.TSHAPE:
        # 1.0 x 0.5 bar with a 0.5 x 0.5 stem below, shifted to the centroid
        bar = (1.0, 0.5, 0.0, 0.25)
        stem = (0.5, 0.5, 0.0, -0.25)
        a_bar, a_stem = 0.5, 0.25
        cy = (a_bar * 0.25 + a_stem * -0.25) / (a_bar + a_stem)
        return Footprint(
            (
                _rect_poly(bar[0], bar[1], bar[2], bar[3] - cy),
                _rect_poly(stem[0], stem[1], stem[2], stem[3] - cy),
            )
        )
    if kind is ObjectKind.CYLINDER:
        r = size or 1.5
        n = 24
        verts = tuple(
            Vec2(r * math.cos(2 * math.pi * k / n), r * math.sin(2 * math.pi * k / n))
            for k in range(n)
        )
        return Footprint((ConvexPolygon(verts),))
    raise ValueError(f"unknown object kind {kind}")


def make_object(kind: ObjectKind, mass: float, size: float = 0.0, pose: Pose2 | None = None) -> ObjectBody:
    fp = make_footprint(kind, size)
    area = sum(p.area for p in fp.parts)
    polar = sum(p.second_moment_per_area() * p.area for p in fp.parts)
    inertia = mass * polar / area
    return ObjectBody(fp, pose or Pose2(Vec2(0, 0), 0.0), mass=mass, inertia=inertia)


@dataclass(frozen=True)
class TaskSpec:
    name: str
    object_kind: ObjectKind
    object_mass: float
    object_size: float  # side length (cuboid) or radius (cylinder); 0 = default
    n_agents: int
    agent_r: tuple[float, float]  # spawn annulus around the object
    subgoal_r: tuple[float, float] = (1.5, 3.0)
    room: Rect = ROOM
    timeout_mid: float = 20.0
    timeout_long: float = 120.0
    subgoal_threshold: float = 1.0
    target_threshold: float = 1.0

    def __post_init__(self):
        if self.n_agents < 1:
            raise ValueError("need at least one agent")
        if self.subgoal_threshold <= 0 or self.target_threshold <= 0:
            raise ValueError("thresholds must be positive")


_PRESETS = {}


def _preset(name, kind, mass, size, n, agent_r):
    _PRESETS[name] = TaskSpec(name, kind, mass, size, n, agent_r)


_preset("cuboid2", ObjectKind.CUBOID, 4.0, 1.2, 2, (1.2, 1.3))
_preset("bigcuboid2", ObjectKind.CUBOID, 6.0, 1.5, 2, (1.2, 1.3))
_preset("tshape2", ObjectKind.TSHAPE, 3.0, 0.0, 2, (1.2, 1.3))
for _n in (1, 2, 3, 4):
    _preset(f"cyl{_n}", ObjectKind.CYLINDER, 10.0, 1.5, _n, (2.0, 2.5))
_preset("cuboid1", ObjectKind.CUBOID, 4.0, 1.2, 1, (1.2, 1.3))
_preset("tshape1", ObjectKind.TSHAPE, 3.0, 0.0, 1, (1.2, 1.3))


def task_preset(name: str) -> TaskSpec:
    try:
        return _PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown task preset {name!r}; have {sorted(_PRESETS)}") from None


def preset_names() -> list[str]:
    return sorted(_PRESETS)


# ---------------------------------------------------------------------------
# spawning
# ---------------------------------------------------------------------------


def _robot_collides(pos: Vec2, radius: float, world_parts, others, obstacles, bounds) -> bool:
    from .geom2d import _signed_distance_raw

    if not bounds.contains(pos.x, pos.y, margin=radius):
        return True
    for pts in world_parts:
        if _signed_distance_raw(pts, pos.x, pos.y) < radius:
            return True
    for other in others:
        if (pos - other.pose.position).norm() < radius + other.radius:
            return True
    for o in obstacles:
        dx = abs(pos.x - o.center.x) - o.half_extent
        dy = abs(pos.y - o.center.y) - o.half_extent
        d = math.hypot(max(dx, 0.0), max(dy, 0.0)) if (dx > 0 or dy > 0) else max(dx, dy)
        if d < radius:
            return True
    return False


def _spawn_robots(
    task: TaskSpec,
    rng: np.random.Generator,
    center: Vec2,
    world_parts,
    obstacles,
    bounds: Rect,
) -> list[RobotState]:
    robots: list[RobotState] = []
    for _ in range(task.n_agents):
        for attempt in range(100):
            r = float(rng.uniform(*task.agent_r))
            th = float(rng.uniform(0.0, 2.0 * math.pi))
            pos = Vec2(center.x + r * math.cos(th), center.y + r * math.sin(th))
            yaw = float(rng.uniform(-math.pi, math.pi))
            if not _robot_collides(pos, 0.35, world_parts, robots, obstacles, bounds):
                robots.append(RobotState(Pose2(pos, yaw)))
                break
        else:
            raise SpawnCollision(
                f"no collision-free spawn for robot {len(robots)} after 100 attempts"
            )
    return robots


def reset_mid(
    task: TaskSpec,
    rng: np.random.Generator,
    friction_range: tuple[float, float] = (0.2, 1.0),
) -> tuple[WorldState, Vec2]:
    """Free-space subgoal-reaching episode: object at the room center with a
    random yaw, agents on their spawn annulus, subgoal on the sampled annulus,
    no obstacles, friction randomized."""
    yaw = float(rng.uniform(-math.pi, math.pi))
    obj = make_object(task.object_kind, task.object_mass, task.object_size, Pose2(Vec2(0, 0), yaw))
    probe = WorldState(robots=(), object=obj, obstacles=(), bounds=task.room)
    robots = _spawn_robots(task, rng, Vec2(0, 0), probe.world_parts, (), task.room)
    r = float(rng.uniform(*task.subgoal_r))
    th = float(rng.uniform(0.0, 2.0 * math.pi))
    subgoal = Vec2(r * math.cos(th), r * math.sin(th))
    world = WorldState(robots=tuple(robots), object=obj, obstacles=(), bounds=task.room)
    world = randomize_friction(world, rng, *friction_range)
    return world, subgoal


def gen_curved_reference(rng: np.random.Generator, start: Vec2, goal: Vec2) -> PathPolyline:
    """Random long curved trajectory: a cubic spline through the endpoints and
    2-4 intermediate control points offset laterally by U[-3, 3] m from the
    chord, sampled every 0.25 m of arclength."""
    if (goal - start).norm() < 1e-9:
        raise ValueError("start and goal coincide")
    k = int(rng.integers(2, 5))
    offsets = rng.uniform(-3.0, 3.0, k)
    return gen_reference_spline(start, goal, list(offsets), spacing=0.25)


def _sample_strip_obstacles(
    rng: np.random.Generator,
    ref: PathPolyline,
    n_obstacles: int,
    start: Vec2,
    goal: Vec2,
) -> list[Obstacle]:
    """Obstacles uniform in the 4 m wide strip around the reference, away from
    the endpoints."""
    out: list[Obstacle] = []
    length = ref.length
    for _ in range(n_obstacles):
        for attempt in range(200):
            s = float(rng.uniform(min(2.5, length / 2), max(length - 2.5, length / 2)))
            u = float(rng.uniform(-2.0, 2.0))
            p = ref.point_at(s)
            q = ref.point_at(min(s + 0.25, length))
            d = q - p
            if d.norm() < 1e-9:
                continue
            d = d.normalized()
            c = Vec2(p.x - d.y * u, p.y + d.x * u)
            if (c - start).norm() < 2.5 or (c - goal).norm() < 2.5:
                continue
            if not ROOM.contains(c.x, c.y, margin=0.5):
                continue
            out.append(Obstacle(c))
            break
        else:
            raise SpawnCollision("could not place strip obstacles")
    return out


def _sample_open_obstacles(
    rng: np.random.Generator,
    axis: int,
    n_obstacles: int,
    start: Vec2,
    goal: Vec2,
) -> list[Obstacle]:
    """Obstacles uniform in the central band between the two room sides."""
    out: list[Obstacle] = []
    for _ in range(n_obstacles):
        for attempt in range(200):
            along = float(rng.uniform(-6.0, 6.0))
            cross = float(rng.uniform(-8.0, 8.0))
            c = Vec2(along, cross) if axis == 0 else Vec2(cross, along)
            if (c - start).norm() < 2.5 or (c - goal).norm() < 2.5:
                continue
            out.append(Obstacle(c))
            break
        else:
            raise SpawnCollision("could not place obstacles")
    return out


def reset_long(
    task: TaskSpec,
    rng: np.random.Generator,
    n_obstacles: int = 6,
    training: bool = False,
    rrt_cfg: RrtConfig | None = None,
    friction_range: tuple[float, float] = (0.2, 1.0),
) -> tuple[WorldState, Vec2, MapInfo, PathPolyline]:
    """Long-horizon episode: object on one side of the room, goal on the other
    (start-goal distance over 10 m).

    During training the reference is a synthetic curved trajectory and
    obstacles fall in the 4 m strip around it; at evaluation obstacles are
    placed first and an RRT reference is planned (NoPath propagates so the
    caller can resample)."""
    axis = int(rng.integers(2))
    sign = 1.0 if rng.uniform() < 0.5 else -1.0
    a0 = sign * float(rng.uniform(7.5, 10.0))
    a1 = -sign * float(rng.uniform(7.5, 10.0))
    c0 = float(rng.uniform(-8.0, 8.0))
    c1 = float(rng.uniform(-8.0, 8.0))
    start = Vec2(a0, c0) if axis == 0 else Vec2(c0, a0)
    goal = Vec2(a1, c1) if axis == 0 else Vec2(c1, a1)

    yaw = float(rng.uniform(-math.pi, math.pi))
    obj = make_object(task.object_kind, task.object_mass, task.object_size, Pose2(start, yaw))
    inflation = 0.8 * obj.footprint.circumradius

    if training:
        reference = gen_curved_reference(rng, start, goal)
        obstacles = _sample_strip_obstacles(rng, reference, n_obstacles, start, goal)
        mapinfo = MapInfo(task.room, tuple(obstacles), inflation)
    else:
        obstacles = _sample_open_obstacles(rng, axis, n_obstacles, start, goal)
        mapinfo = MapInfo(task.room, tuple(obstacles), inflation)
        cfg = rrt_cfg or RrtConfig(seed=int(rng.integers(0, 2**31)))
        reference = plan_rrt(mapinfo, start, goal, cfg)  # NoPath propagates

    probe = WorldState(robots=(), object=obj, obstacles=tuple(obstacles), bounds=task.room)
    robots = _spawn_robots(task, rng, start, probe.world_parts, obstacles, task.room)
    world = WorldState(
        robots=tuple(robots), object=obj, obstacles=tuple(obstacles), bounds=task.room
    )
    world = randomize_friction(world, rng, *friction_range)
    return world, goal, mapinfo, reference


# ---------------------------------------------------------------------------
# observations
# ---------------------------------------------------------------------------


def mid_obs_dim(n_agents: int) -> int:
    return 2 + 3 + 3 + 2 * N_OBS_MID + 6 * (n_agents - 1)


def mid_state_dim(n_agents: int) -> int:
    return 8 + 6 * n_agents


def high_obs_dim(n_agents: int) -> int:
    return 2 + 6 + 6 * n_agents + 2 * N_OBS_HIGH + 2 * N_PATH_POINTS


def _nearest_obstacles(obstacles, ref: Vec2, count: int):
    """Up to `count` obstacles sorted by distance to `ref` (ties by index)."""
    order = sorted(
        range(len(obstacles)),
        key=lambda i: ((obstacles[i].center - ref).norm(), i),
    )
    return [obstacles[i] for i in order[:count]]


def build_mid_obs(world: WorldState, agent_i: int, subgoal: Vec2) -> np.ndarray:
    """Local-frame observation of one robot: subgoal, own velocity, object
    pose, the nearest obstacles, and the other robots, positions scaled by
    1/10. Absent obstacle slots read (1, 1) post-normalization."""
    rob = world.robots[agent_i]
    frame = rob.pose
    out = np.empty(mid_obs_dim(len(world.robots)))
    sg = to_local(frame, subgoal)
    out[0] = sg.x / POS_NORM
    out[1] = sg.y / POS_NORM
    out[2:5] = rob.body_vel
    op = to_local(frame, world.object.pose.position)
    out[5] = op.x / POS_NORM
    out[6] = op.y / POS_NORM
    out[7] = wrap_angle(world.object.pose.yaw - frame.yaw)
    k = 8
    near = _nearest_obstacles(world.obstacles, frame.position, N_OBS_MID)
    for o in near:
        rel = to_local(frame, o.center)
        out[k] = rel.x / POS_NORM
        out[k + 1] = rel.y / POS_NORM
        k += 2
    for _ in range(N_OBS_MID - len(near)):
        out[k] = OBSTACLE_PAD / POS_NORM
        out[k + 1] = OBSTACLE_PAD / POS_NORM
        k += 2
    for j, other in enumerate(world.robots):
        if j == agent_i:
            continue
        rel = to_local(frame, other.pose.position)
        out[k] = rel.x / POS_NORM
        out[k + 1] = rel.y / POS_NORM
        out[k + 2] = wrap_angle(other.pose.yaw - frame.yaw)
        out[k + 3 : k + 6] = other.body_vel
        k += 6
    return out


def build_mid_state(world: WorldState, subgoal: Vec2) -> np.ndarray:
    """Global state for the centralized critic: world-frame, object-centric,
    plus privileged friction coefficients (training-only input)."""
    obj = world.object
    oxy = obj.pose.position
    out = np.empty(mid_state_dim(len(world.robots)))
    out[0] = (subgoal.x - oxy.x) / POS_NORM
    out[1] = (subgoal.y - oxy.y) / POS_NORM
    out[2] = obj.pose.yaw
    out[3] = obj.lin_vel.x
    out[4] = obj.lin_vel.y
    out[5] = obj.ang_vel
    out[6] = obj.mu_ground
    out[7] = obj.mu_contact
    k = 8
    for rob in world.robots:
        out[k] = (rob.pose.position.x - oxy.x) / POS_NORM
        out[k + 1] = (rob.pose.position.y - oxy.y) / POS_NORM
        out[k + 2] = rob.pose.yaw
        out[k + 3 : k + 6] = rob.body_vel
        k += 6
    return out


def build_high_obs(world: WorldState, goal: Vec2, path: PathPolyline) -> np.ndarray:
    """Centralized observation: goal and path context relative to the object,
    absolute object pose and velocities, robot states, nearest obstacles."""
    obj = world.object
    oxy = obj.pose.position
    out = np.empty(high_obs_dim(len(world.robots)))
    out[0] = (goal.x - oxy.x) / POS_NORM
    out[1] = (goal.y - oxy.y) / POS_NORM
    out[2] = oxy.x / POS_NORM
    out[3] = oxy.y / POS_NORM
    out[4] = obj.pose.yaw
    out[5] = obj.lin_vel.x
    out[6] = obj.lin_vel.y
    out[7] = obj.ang_vel
    k = 8
    for rob in world.robots:
        out[k] = (rob.pose.position.x - oxy.x) / POS_NORM
        out[k + 1] = (rob.pose.position.y - oxy.y) / POS_NORM
        out[k + 2] = rob.pose.yaw
        out[k + 3 : k + 6] = rob.body_vel
        k += 6
    near = _nearest_obstacles(world.obstacles, oxy, N_OBS_HIGH)
    for o in near:
        out[k] = (o.center.x - oxy.x) / POS_NORM
        out[k + 1] = (o.center.y - oxy.y) / POS_NORM
        k += 2
    for _ in range(N_OBS_HIGH - len(near)):
        out[k] = OBSTACLE_PAD / POS_NORM
        out[k + 1] = OBSTACLE_PAD / POS_NORM
        k += 2
    from .planner import nearest_on_path

    _, s0 = nearest_on_path(path, oxy)
    for i in range(N_PATH_POINTS):
        p = path.point_at(s0 + i * PATH_POINT_SPACING)
        out[k] = (p.x - oxy.x) / POS_NORM
        out[k + 1] = (p.y - oxy.y) / POS_NORM
        k += 2
    return out


def clamp_subgoal_offset(delta: np.ndarray) -> Vec2:
    """Clamp a raw subgoal offset into the [0.25, 3.0] m annulus."""
    dx, dy = float(delta[0]), float(delta[1])
    n = math.hypot(dx, dy)
    if n < 1e-12:
        return Vec2(SUBGOAL_RADIUS_MIN, 0.0)
    n_clamped = min(max(n, SUBGOAL_RADIUS_MIN), SUBGOAL_RADIUS_MAX)
    return Vec2(dx / n * n_clamped, dy / n * n_clamped)


def subgoal_from_action(world: WorldState, delta: np.ndarray) -> Vec2:
    off = clamp_subgoal_offset(delta)
    o = world.object.pose.position
    return Vec2(o.x + off.x, o.y + off.y)


# ---------------------------------------------------------------------------
# termination
# ---------------------------------------------------------------------------


class Status(enum.Enum):
    RUNNING = "running"
    SUCCESS = "success"
    FAILURE = "failure"


@dataclass(frozen=True)
class Termination:
    status: Status
    failure_kind: str | None = None  # collision / obstacle_collision / timeout

    @property
    def done(self) -> bool:
        return self.status is not Status.RUNNING


_FAILURE_NAMES = {
    ExceptionKind.ROBOT_ROBOT_COLLISION: "collision",
    ExceptionKind.ROBOT_OBSTACLE_COLLISION: "obstacle_collision",
    ExceptionKind.TIMEOUT: "timeout",
}


def termination(
    world: WorldState,
    events: StepEvents,
    target: Vec2,
    threshold: float,
    timeout: float,
) -> Termination:
    """Success when the object center is within threshold of the target;
    failure on any exception or when time reaches the timeout."""
    o = world.object.pose.position
    if math.hypot(target.x - o.x, target.y - o.y) < threshold:
        return Termination(Status.SUCCESS)
    if events.exceptions:
        kind = sorted(_FAILURE_NAMES[e] for e in events.exceptions)[0]
        return Termination(Status.FAILURE, kind)
    if world.time >= timeout:
        return Termination(Status.FAILURE, "timeout")
    return Termination(Status.RUNNING)


def inject_timeout(events: StepEvents, world: WorldState, timeout: float) -> StepEvents:
    """Add the timeout exception once the episode clock reaches the limit."""
    if world.time >= timeout and ExceptionKind.TIMEOUT not in events.exceptions:
        return StepEvents(
            events.exceptions | {ExceptionKind.TIMEOUT}, events.contacts
        )
    return events
