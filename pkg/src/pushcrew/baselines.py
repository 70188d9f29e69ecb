"""Per-method policy dispatchers for evaluation episodes.

A controller turns the current world into one velocity command per robot plus
the active subgoal (for logging). Methods:

* ours        -- RRT reference + learned subgoal policy + learned pushing policy
* sa          -- ours with a single robot (policies trained for N=1)
* ours_no_ocb -- ours with a pushing policy trained without the occlusion term
* ml / ml_ft  -- pushing policy conditioned directly on the final goal
* hl / hl_ft  -- per-robot navigation targets tracked by a proportional controller
* rrt_only    -- subgoal slides along the RRT path ahead of the object
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .envs import p_controller
from .geom2d import Vec2
from .neural import GaussianPolicy
from .planner import PathPolyline, nearest_on_path
from .pushworld import WorldState
from .tasks import build_high_obs, build_mid_obs, subgoal_from_action

METHODS = ("ours", "sa", "hl", "ml", "hl_ft", "ml_ft", "ours_no_ocb", "rrt_only")

RRT_LOOKAHEAD = 1.5  # m of arclength ahead of the object's path projection


class HierarchicalController:
    """Pushing policy guided by a subgoal source.

    The subgoal comes from the learned adaptive policy when one is given,
    from the RRT path (lookahead rule) when `use_path_lookahead` is set, and
    falls back to the final goal otherwise (goal-conditioned baselines).
    """

    def __init__(
        self,
        mid_policy: GaussianPolicy,
        high_policy: GaussianPolicy | None = None,
        use_path_lookahead: bool = False,
        decision_period: int = 1,
    ):
        self.mid = mid_policy
        self.high = high_policy
        self.use_path_lookahead = use_path_lookahead
        self.decision_period = decision_period
        self._goal: Vec2 | None = None
        self._path: PathPolyline | None = None
        self._subgoal: Vec2 | None = None
        self._steps = 0

    def start_episode(self, world: WorldState, goal: Vec2, path: PathPolyline | None):
        self._goal = goal
        self._path = path
        self._subgoal = None
        self._steps = 0

    def _update_subgoal(self, world: WorldState) -> Vec2:
        if self.high is not None:
            obs = build_high_obs(world, self._goal, self._path)
            delta = self.high.mean_clamped(obs)
            return subgoal_from_action(world, delta)
        if self.use_path_lookahead:
            _, s = nearest_on_path(self._path, world.object.pose.position)
            return self._path.point_at(s + RRT_LOOKAHEAD)
        return self._goal

    def act(self, world: WorldState) -> tuple[list[tuple[float, float, float]], Vec2]:
        if self._subgoal is None or self._steps % self.decision_period == 0:
            self._subgoal = self._update_subgoal(world)
        self._steps += 1
        n = len(world.robots)
        obs = np.stack([build_mid_obs(world, a, self._subgoal) for a in range(n)])
        cmds = self.mid.mean_clamped(obs)
        return [tuple(c) for c in cmds], self._subgoal


class RobotGoalController:
    """Per-robot navigation targets from a shared policy, tracked by the
    proportional point controller. The logged subgoal is the final goal."""

    def __init__(self, policy: GaussianPolicy):
        self.policy = policy
        self._goal: Vec2 | None = None

    def start_episode(self, world: WorldState, goal: Vec2, path: PathPolyline | None):
        self._goal = goal

    def act(self, world: WorldState) -> tuple[list[tuple[float, float, float]], Vec2]:
        n = len(world.robots)
        obs = np.stack([build_mid_obs(world, a, self._goal) for a in range(n)])
        deltas = self.policy.mean_clamped(obs)
        cmds = []
        for a in range(n):
            rob = world.robots[a]
            target = Vec2(
                rob.pose.position.x + float(np.clip(deltas[a, 0], -3, 3)),
                rob.pose.position.y + float(np.clip(deltas[a, 1], -3, 3)),
            )
            cmds.append(p_controller(rob, target))
        return cmds, self._goal


@dataclass
class MethodPolicies:
    """Checkpointed policies needed by a method (unused slots stay None)."""

    mid: GaussianPolicy | None = None
    high: GaussianPolicy | None = None
    robot_goal: GaussianPolicy | None = None


def needs_path(method: str) -> bool:
    return method in ("ours", "sa", "ours_no_ocb", "rrt_only")


def needs_high(method: str) -> bool:
    return method in ("ours", "sa", "ours_no_ocb")


def run_baseline(method: str, policies: MethodPolicies, decision_period: int = 1):
    """Build the per-step command dispatcher for a method."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; have {METHODS}")
    if method in ("ours", "sa", "ours_no_ocb"):
        return HierarchicalController(
            policies.mid, policies.high, decision_period=decision_period
        )
    if method == "rrt_only":
        return HierarchicalController(policies.mid, None, use_path_lookahead=True)
    if method in ("ml", "ml_ft"):
        return HierarchicalController(policies.mid, None)
    if method in ("hl", "hl_ft"):
        return RobotGoalController(policies.robot_goal)
    raise AssertionError("unreachable")
