"""Reward tables for the mid-level pushing policy and the high-level
subgoal policy.

The mid-level reward is the sum of a task part (subgoal reaching/approach),
a penalty part (exceptions, inter-robot proximity), and a heuristic part
(object approach, object velocity, occlusion-based contact). The high-level
reward combines a task part (target reaching/approach, reference-path
following) with a penalty part (exceptions, obstacle proximity). Every row
reports both its raw value and its weighted contribution, and the total is
exactly the sum of the weighted terms.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields

from .errors import DegenerateTarget, InteriorQuery
from .geom2d import ConvexPolygon, Vec2, closest_boundary_point, poly_poly_clearance
from .planner import PathPolyline, nearest_on_path
from .pushworld import StepEvents, WorldState


@dataclass(frozen=True)
class MidRewardWeights:
    """Row weights of the mid-level reward table.

    `alpha` scales the per-step decrease of the object-to-subgoal distance
    inside the approach row; `vel_threshold` gates the object-velocity bonus;
    `reach_threshold` is the subgoal-reaching radius in meters.
    """

    subgoal_reach: float = 10.0
    subgoal_approach: float = 3.25e-3
    alpha: float = 200.0
    exception: float = -5.0
    collision: float = -2.5e-3
    object_approach: float = 7.5e-4
    object_vel: float = 1.5e-3
    ocb: float = 4e-3
    vel_threshold: float = 0.1
    reach_threshold: float = 1.0

    def without_ocb(self) -> "MidRewardWeights":
        return MidRewardWeights(
            **{**_asdict(self), "ocb": 0.0}
        )

    def task_and_penalty_only(self) -> "MidRewardWeights":
        """Zero every heuristic row (object approach, object velocity, occlusion)."""
        return MidRewardWeights(
            **{**_asdict(self), "object_approach": 0.0, "object_vel": 0.0, "ocb": 0.0}
        )


@dataclass(frozen=True)
class HighRewardWeights:
    """Row weights of the high-level reward table."""

    target_reach: float = 2.0
    target_approach: float = 0.3
    path_follow: float = 0.5
    exception: float = -0.5
    obstacle: float = -0.1
    reach_threshold: float = 1.0


def _asdict(w) -> dict:
    return {f.name: getattr(w, f.name) for f in fields(w)}


@dataclass(frozen=True)
class RewardTerm:
    raw: float
    weighted: float


@dataclass(frozen=True)
class MidRewardBreakdown:
    subgoal_reach: RewardTerm
    subgoal_approach: RewardTerm
    exception: RewardTerm
    collision: RewardTerm
    object_approach: RewardTerm
    object_vel: RewardTerm
    ocb: RewardTerm
    total: float


@dataclass(frozen=True)
class HighRewardBreakdown:
    target_reach: RewardTerm
    target_approach: RewardTerm
    path_follow: RewardTerm
    exception: RewardTerm
    obstacle: RewardTerm
    total: float


def ocb_reward(
    hull_world: ConvexPolygon, robot_pos: Vec2, object_center: Vec2, subgoal: Vec2
) -> float:
    """Occlusion-based contact reward in [-1, 1].

    Dot product of the hull-inward unit normal at the closest hull point to the
    robot with the unit vector from the object center toward the subgoal: +1
    when the robot stands against the face that occludes its view of the
    subgoal, -1 on the goal side, 0 on a side face.
    """
    if hull_world.strictly_contains(robot_pos):
        raise InteriorQuery("robot center is strictly inside the object hull")
    return _ocb_value(hull_world, robot_pos, object_center, subgoal)


def _ocb_value(
    hull_world: ConvexPolygon, robot_pos: Vec2, object_center: Vec2, subgoal: Vec2
) -> float:
    """Occlusion term extended continuously to interior robot positions."""
    cp = closest_boundary_point(hull_world, robot_pos)
    return _ocb_from_normal(cp.inward_normal, object_center, subgoal)


def _ocb_from_normal(inward_normal: Vec2, object_center: Vec2, subgoal: Vec2) -> float:
    tx = subgoal.x - object_center.x
    ty = subgoal.y - object_center.y
    tn = math.hypot(tx, ty)
    if tn < 1e-12:
        raise DegenerateTarget("subgoal coincides with the object center")
    return (inward_normal.x * tx + inward_normal.y * ty) / tn


def mid_reward(
    prev: WorldState,
    cur: WorldState,
    events: StepEvents,
    subgoal: Vec2,
    agent_index: int,
    w: MidRewardWeights = MidRewardWeights(),
) -> MidRewardBreakdown:
    """Evaluate the mid-level reward table for one agent over one step."""
    obj_prev = prev.object.pose.position
    obj_cur = cur.object.pose.position
    d_prev = math.hypot(subgoal.x - obj_prev.x, subgoal.y - obj_prev.y)
    d_cur = math.hypot(subgoal.x - obj_cur.x, subgoal.y - obj_cur.y)

    reach_raw = 1.0 if d_cur < w.reach_threshold else 0.0
    approach_raw = w.alpha * (d_prev - d_cur) - d_cur
    exception_raw = 1.0 if events.exceptions else 0.0

    collision_raw = 0.0
    n = len(cur.robots)
    if n > 1:
        pi = cur.robots[agent_index].pose.position
        ri = cur.robots[agent_index].radius
        for j, rob in enumerate(cur.robots):
            if j == agent_index:
                continue
            pj = rob.pose.position
            d_ij = max(0.0, math.hypot(pi.x - pj.x, pi.y - pj.y) - ri - rob.radius)
            collision_raw += 1.0 / (0.02 + d_ij / 3.0)

    hull = cur.world_hull
    rp = cur.robots[agent_index].pose.position
    cp = closest_boundary_point(hull, rp)
    d_obj = 0.0 if hull.strictly_contains(rp) else cp.distance
    obj_approach_raw = -((d_obj + 0.5) ** 2)

    speed = cur.object.lin_vel.norm()
    vel_raw = 1.0 if speed > w.vel_threshold else 0.0

    ocb_raw = _ocb_from_normal(cp.inward_normal, obj_cur, subgoal)

    terms = {
        "subgoal_reach": RewardTerm(reach_raw, reach_raw * w.subgoal_reach),
        "subgoal_approach": RewardTerm(approach_raw, approach_raw * w.subgoal_approach),
        "exception": RewardTerm(exception_raw, exception_raw * w.exception),
        "collision": RewardTerm(collision_raw, collision_raw * w.collision),
        "object_approach": RewardTerm(obj_approach_raw, obj_approach_raw * w.object_approach),
        "object_vel": RewardTerm(vel_raw, vel_raw * w.object_vel),
        "ocb": RewardTerm(ocb_raw, ocb_raw * w.ocb),
    }
    total = sum(t.weighted for t in terms.values())
    return MidRewardBreakdown(total=total, **terms)


def high_reward(
    cur: WorldState,
    events: StepEvents,
    goal: Vec2,
    path: PathPolyline,
    subgoal: Vec2,
    w: HighRewardWeights = HighRewardWeights(),
) -> HighRewardBreakdown:
    """Evaluate the high-level reward table at one decision step."""
    obj = cur.object.pose.position
    d_target = math.hypot(goal.x - obj.x, goal.y - obj.y)

    reach_raw = 1.0 if d_target < w.reach_threshold else 0.0
    approach_raw = 1.0 / (1.0 + d_target)

    proj, _s = nearest_on_path(path, subgoal)
    d_path = math.hypot(subgoal.x - proj.x, subgoal.y - proj.y)
    follow_raw = 1.0 / (1.0 + d_path)

    exception_raw = 1.0 if events.exceptions else 0.0

    if cur.obstacles:
        hull = cur.world_hull
        d_obst = min(poly_poly_clearance(hull, o.polygon()) for o in cur.obstacles)
        obstacle_raw = 1.0 / (1.0 + d_obst)
    else:
        obstacle_raw = 0.0

    terms = {
        "target_reach": RewardTerm(reach_raw, reach_raw * w.target_reach),
        "target_approach": RewardTerm(approach_raw, approach_raw * w.target_approach),
        "path_follow": RewardTerm(follow_raw, follow_raw * w.path_follow),
        "exception": RewardTerm(exception_raw, exception_raw * w.exception),
        "obstacle": RewardTerm(obstacle_raw, obstacle_raw * w.obstacle),
    }
    total = sum(t.weighted for t in terms.values())
    return HighRewardBreakdown(total=total, **terms)
