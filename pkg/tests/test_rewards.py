import math

import numpy as np
import pytest

from pushcrew.errors import DegenerateTarget, InteriorQuery
from pushcrew.geom2d import ConvexPolygon, Footprint, Pose2, Vec2
from pushcrew.planner import PathPolyline
from pushcrew.pushworld import (
    ExceptionKind,
    ObjectBody,
    Obstacle,
    RobotState,
    StepEvents,
    WorldState,
)
from pushcrew.rewards import (
    HighRewardWeights,
    MidRewardWeights,
    high_reward,
    mid_reward,
    ocb_reward,
)


def square_hull(half=0.5, center=Vec2(0, 0)):
    return ConvexPolygon(
        (
            Vec2(center.x - half, center.y - half),
            Vec2(center.x + half, center.y - half),
            Vec2(center.x + half, center.y + half),
            Vec2(center.x - half, center.y + half),
        )
    )


def world_with(robots, obj_pos=Vec2(0, 0), obj_vel=Vec2(0, 0), obstacles=(), size=1.2):
    fp = Footprint((square_hull(size / 2),))
    obj = ObjectBody(
        fp,
        Pose2(obj_pos, 0.0),
        lin_vel=obj_vel,
        mass=4.0,
        inertia=4.0 * fp.parts[0].second_moment_per_area(),
    )
    return WorldState(robots=tuple(robots), object=obj, obstacles=tuple(obstacles))


NO_EVENTS = StepEvents(frozenset(), (False,))


# ---------------------------------------------------------------------------
# occlusion-based contact reward
# ---------------------------------------------------------------------------


def test_ocb_behind_occluding_face_is_plus_one():
    v = ocb_reward(square_hull(), Vec2(-3, 0), Vec2(0, 0), Vec2(5, 0))
    assert v == pytest.approx(1.0, abs=1e-12)


def test_ocb_goal_side_is_minus_one():
    v = ocb_reward(square_hull(), Vec2(3, 0), Vec2(0, 0), Vec2(5, 0))
    assert v == pytest.approx(-1.0, abs=1e-12)


def test_ocb_side_face_is_zero():
    v = ocb_reward(square_hull(), Vec2(0, 3), Vec2(0, 0), Vec2(5, 0))
    assert v == pytest.approx(0.0, abs=1e-12)


def test_ocb_scale_invariant_while_facing_same_region():
    hull = square_hull()
    # scaling the robot away along its ray keeps it in the left-face strip
    v1 = ocb_reward(hull, Vec2(-1, 0.2), Vec2(0, 0), Vec2(5, 1))
    v2 = ocb_reward(hull, Vec2(-2, 0.4), Vec2(0, 0), Vec2(5, 1))
    assert v1 == pytest.approx(v2, abs=1e-12)
    # and likewise within a vertex cone
    v3 = ocb_reward(hull, Vec2(2, 2), Vec2(0, 0), Vec2(5, 1))
    v4 = ocb_reward(hull, Vec2(6, 6), Vec2(0, 0), Vec2(5, 1))
    assert v3 == pytest.approx(v4, abs=1e-12)


def test_ocb_bounded():
    rng = np.random.default_rng(0)
    hull = square_hull()
    for _ in range(200):
        q = Vec2(*rng.uniform(-4, 4, 2))
        if hull.contains(q, tol=1e-9):
            continue
        g = Vec2(*rng.uniform(-4, 4, 2))
        if g.norm() < 1e-6:
            continue
        assert abs(ocb_reward(hull, q, Vec2(0, 0), g)) <= 1.0 + 1e-12


def test_ocb_errors():
    with pytest.raises(InteriorQuery):
        ocb_reward(square_hull(), Vec2(0.1, 0.1), Vec2(0, 0), Vec2(5, 0))
    with pytest.raises(DegenerateTarget):
        ocb_reward(square_hull(), Vec2(-3, 0), Vec2(1, 1), Vec2(1, 1))


# ---------------------------------------------------------------------------
# mid-level table
# ---------------------------------------------------------------------------


def two_robot_worlds(d_prev=2.0, d_cur=1.9):
    """Object slides toward a subgoal on +x between prev and cur."""
    sub = Vec2(3.0, 0.0)
    r0 = RobotState(Pose2(Vec2(-1.2, 0.0), 0.0))
    r1 = RobotState(Pose2(Vec2(0.0, -1.5), 0.0))
    prev = world_with([r0, r1], obj_pos=Vec2(sub.x - d_prev, 0.0))
    cur = world_with([r0, r1], obj_pos=Vec2(sub.x - d_cur, 0.0))
    return prev, cur, sub


def test_subgoal_approach_row_value():
    prev, cur, sub = two_robot_worlds(2.0, 1.9)
    br = mid_reward(prev, cur, StepEvents(frozenset(), (False, False)), sub, 0)
    # (alpha * (d_prev - d_cur) - d_cur) * weight, evaluated independently
    want = (200.0 * (2.0 - 1.9) - 1.9) * 3.25e-3
    assert want == pytest.approx(0.058825)
    assert br.subgoal_approach.weighted == pytest.approx(want, abs=1e-12)


def test_collision_row_value():
    prev, cur, sub = two_robot_worlds()
    # place the robots so their surface separation is exactly 1.0 m
    r0 = RobotState(Pose2(Vec2(-3.0, 6.0), 0.0))
    r1 = RobotState(Pose2(Vec2(-3.0 + 1.0 + 0.7, 6.0), 0.0))
    cur2 = world_with([r0, r1], obj_pos=cur.object.pose.position)
    br = mid_reward(prev, cur2, StepEvents(frozenset(), (False, False)), sub, 0)
    want = -2.5e-3 / (0.02 + 1.0 / 3.0)
    assert want == pytest.approx(-7.0754717e-3, abs=1e-9)
    assert br.collision.weighted == pytest.approx(want, abs=1e-12)


def test_object_approach_row_value():
    prev, cur, sub = two_robot_worlds()
    # robot exactly 0.5 m from the hull boundary (left face at x=-0.6 rel. object)
    obj_x = cur.object.pose.position.x
    r0 = RobotState(Pose2(Vec2(obj_x - 0.6 - 0.5, 0.0), 0.0))
    r1 = RobotState(Pose2(Vec2(obj_x, -8.0), 0.0))
    cur2 = world_with([r0, r1], obj_pos=cur.object.pose.position)
    br = mid_reward(prev, cur2, StepEvents(frozenset(), (False, False)), sub, 0)
    want = -((0.5 + 0.5) ** 2) * 7.5e-4
    assert want == pytest.approx(-7.5e-4)
    assert br.object_approach.weighted == pytest.approx(want, abs=1e-12)


def test_reach_exception_and_velocity_rows():
    sub = Vec2(0.5, 0.0)
    robots = [RobotState(Pose2(Vec2(-2, 0), 0.0)), RobotState(Pose2(Vec2(0, -2), 0.0))]
    prev = world_with(robots, obj_pos=Vec2(0, 0))
    cur = world_with(robots, obj_pos=Vec2(0, 0), obj_vel=Vec2(0.2, 0.0))
    ev = StepEvents(frozenset({ExceptionKind.TIMEOUT}), (False, False))
    br = mid_reward(prev, cur, ev, sub, 0)
    assert br.subgoal_reach.weighted == pytest.approx(10.0)  # d = 0.5 < 1.0
    assert br.exception.weighted == pytest.approx(-5.0)
    assert br.object_vel.weighted == pytest.approx(1.5e-3)  # |v| = 0.2 > 0.1
    # just below the velocity threshold the bonus is off
    cur2 = world_with(robots, obj_pos=Vec2(0, 0), obj_vel=Vec2(0.09, 0.0))
    br2 = mid_reward(prev, cur2, StepEvents(frozenset(), (False, False)), sub, 0)
    assert br2.object_vel.weighted == 0.0


def test_total_equals_sum_of_terms_exactly():
    rng = np.random.default_rng(8)
    for _ in range(50):
        robots = [
            RobotState(Pose2(Vec2(*rng.uniform(-4, 4, 2)), float(rng.uniform(-3, 3))))
            for _ in range(2)
        ]
        prev = world_with(robots, obj_pos=Vec2(*rng.uniform(-1, 1, 2)))
        cur = world_with(robots, obj_pos=Vec2(*rng.uniform(-1, 1, 2)))
        if cur.world_hull.contains(robots[0].pose.position, tol=1e-6):
            continue
        sub = Vec2(*rng.uniform(2, 4, 2))
        br = mid_reward(prev, cur, StepEvents(frozenset(), (False, False)), sub, 0)
        s = (
            br.subgoal_reach.weighted
            + br.subgoal_approach.weighted
            + br.exception.weighted
            + br.collision.weighted
            + br.object_approach.weighted
            + br.object_vel.weighted
            + br.ocb.weighted
        )
        assert br.total == s


def test_single_agent_has_no_collision_term():
    sub = Vec2(3, 0)
    prev = world_with([RobotState(Pose2(Vec2(-2, 0), 0.0))])
    cur = world_with([RobotState(Pose2(Vec2(-2, 0), 0.0))])
    br = mid_reward(prev, cur, NO_EVENTS, sub, 0)
    assert br.collision.raw == 0.0
    assert br.collision.weighted == 0.0


def test_collision_term_monotone_in_distance():
    sub = Vec2(3, 0)
    prev = world_with([RobotState(Pose2(Vec2(-2, 0), 0))] * 2)
    last = -math.inf
    for gap in np.linspace(0.0, 4.0, 17):
        r0 = RobotState(Pose2(Vec2(-3, 5), 0.0))
        r1 = RobotState(Pose2(Vec2(-3 + 0.7 + gap, 5), 0.0))
        cur = world_with([r0, r1])
        br = mid_reward(prev, cur, StepEvents(frozenset(), (False, False)), sub, 0)
        assert br.collision.weighted > last  # penalty shrinks with distance
        last = br.collision.weighted


def test_zeroed_weights_reproduce_ablation_variants():
    prev, cur, sub = two_robot_worlds()
    ev = StepEvents(frozenset(), (False, False))
    full = mid_reward(prev, cur, ev, sub, 0)
    no_ocb = mid_reward(prev, cur, ev, sub, 0, MidRewardWeights().without_ocb())
    assert no_ocb.ocb.weighted == 0.0
    assert no_ocb.total == pytest.approx(full.total - full.ocb.weighted, abs=1e-15)
    bare = mid_reward(prev, cur, ev, sub, 0, MidRewardWeights().task_and_penalty_only())
    assert bare.ocb.weighted == 0.0
    assert bare.object_approach.weighted == 0.0
    assert bare.object_vel.weighted == 0.0
    assert bare.total == pytest.approx(
        full.subgoal_reach.weighted
        + full.subgoal_approach.weighted
        + full.exception.weighted
        + full.collision.weighted,
        abs=1e-15,
    )


def test_mid_reward_robot_inside_hull_is_finite():
    # a robot nestled inside the hull (e.g. in a concave notch) must still
    # produce a finite occlusion value via the continuous interior extension
    sub = Vec2(3, 0)
    robots = [RobotState(Pose2(Vec2(0.3, 0.0), 0.0)), RobotState(Pose2(Vec2(-3, 0), 0.0))]
    prev = world_with(robots)
    cur = world_with(robots)
    br = mid_reward(prev, cur, StepEvents(frozenset(), (False, False)), sub, 0)
    assert math.isfinite(br.total)
    assert br.object_approach.raw == pytest.approx(-0.25)  # d clamped to 0


# ---------------------------------------------------------------------------
# high-level table
# ---------------------------------------------------------------------------


def straight_path():
    return PathPolyline((Vec2(-5, 0), Vec2(5, 0)))


def test_path_follow_on_path():
    w = world_with([RobotState(Pose2(Vec2(-3, 0), 0.0))], obj_pos=Vec2(-4, 0))
    br = high_reward(w, NO_EVENTS, Vec2(5, 0), straight_path(), Vec2(-2, 0))
    assert br.path_follow.weighted == pytest.approx(0.5, abs=1e-12)


def test_target_reach_and_approach_fire_together_at_zero():
    w = world_with([RobotState(Pose2(Vec2(3, 3), 0.0))], obj_pos=Vec2(5, 0))
    br = high_reward(w, NO_EVENTS, Vec2(5, 0), straight_path(), Vec2(4, 0))
    assert br.target_approach.weighted == pytest.approx(0.3, abs=1e-12)
    assert br.target_reach.weighted == pytest.approx(2.0, abs=1e-12)


def test_empty_map_obstacle_term_is_zero():
    w = world_with([RobotState(Pose2(Vec2(3, 3), 0.0))], obj_pos=Vec2(0, 0))
    br = high_reward(w, NO_EVENTS, Vec2(5, 0), straight_path(), Vec2(1, 0))
    assert br.obstacle.raw == 0.0
    assert br.obstacle.weighted == 0.0


def test_obstacle_term_uses_hull_clearance():
    # obstacle face at x=1.5, object face at x=0.6 -> clearance 0.9
    w = world_with(
        [RobotState(Pose2(Vec2(-3, 0), 0.0))],
        obj_pos=Vec2(0, 0),
        obstacles=[Obstacle(Vec2(2.0, 0.0))],
    )
    br = high_reward(w, NO_EVENTS, Vec2(5, 0), straight_path(), Vec2(1, 0))
    assert br.obstacle.weighted == pytest.approx(-0.1 / (1.0 + 0.9), abs=1e-9)


def test_high_exception_row():
    w = world_with([RobotState(Pose2(Vec2(3, 3), 0.0))], obj_pos=Vec2(0, 0))
    ev = StepEvents(frozenset({ExceptionKind.ROBOT_ROBOT_COLLISION}), (False,))
    br = high_reward(w, ev, Vec2(5, 0), straight_path(), Vec2(1, 0))
    assert br.exception.weighted == pytest.approx(-0.5)


def test_high_total_is_exact_sum():
    w = world_with(
        [RobotState(Pose2(Vec2(3, 3), 0.0))],
        obj_pos=Vec2(1, 1),
        obstacles=[Obstacle(Vec2(4.0, -2.0))],
    )
    br = high_reward(w, NO_EVENTS, Vec2(5, 0), straight_path(), Vec2(2, 1))
    s = (
        br.target_reach.weighted
        + br.target_approach.weighted
        + br.path_follow.weighted
        + br.exception.weighted
        + br.obstacle.weighted
    )
    assert br.total == s
