"""Vectorized episode environments.

Each environment owns its worlds exclusively and steps them in sequence, so a
fixed master seed yields bit-identical rollouts. Finished episodes auto-reset
and leave a summary record for the caller.

Three flavors cover every training pipeline:

* MidVecEnv       -- free-space subgoal reaching (annulus-sampled subgoals) or
                     long-horizon goal-conditioned pushing, actions are robot
                     velocity commands.
* HighVecEnv      -- long-horizon subgoal proposal on top of a frozen mid-level
                     policy; actions are subgoal offsets for the object.
* RobotGoalVecEnv -- long-horizon per-robot navigation targets converted to
                     commands by a proportional controller.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NoPath, SpawnCollision
from .geom2d import Vec2, closest_boundary_point, to_local
from .neural import GaussianPolicy
from .planner import PathPolyline
from .pushworld import ACTION_BOUNDS, StepEvents, WorldState, step
from .rewards import (
    HighRewardWeights,
    MidRewardWeights,
    high_reward,
    mid_reward,
    _ocb_value,
)
from .tasks import (
    Status,
    TaskSpec,
    build_high_obs,
    build_mid_obs,
    build_mid_state,
    high_obs_dim,
    inject_timeout,
    mid_obs_dim,
    mid_state_dim,
    reset_long,
    reset_mid,
    subgoal_from_action,
    termination,
)


def _spawn_rngs(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(seed).spawn(n)]


@dataclass
class _Episode:
    world: WorldState
    target: Vec2  # subgoal (mid task) or final goal (long task)
    path: PathPolyline | None = None
    ep_return: float = 0.0
    length: int = 0


class MidVecEnv:
    """Velocity-command environment for MAPPO training.

    scenario="free": subgoal-reaching episodes from reset_mid (timeout 20 s).
    scenario="long": goal-conditioned long-horizon episodes from reset_long;
    the final goal plays the subgoal's role in observations and rewards.
    """

    def __init__(
        self,
        task: TaskSpec,
        n_envs: int,
        seed: int,
        weights: MidRewardWeights | None = None,
        scenario: str = "free",
        n_obstacles: int = 6,
        timeout: float | None = None,
    ):
        if scenario not in ("free", "long"):
            raise ValueError("scenario must be 'free' or 'long'")
        self.task = task
        self.n_envs = n_envs
        self.n_agents = task.n_agents
        self.obs_dim = mid_obs_dim(task.n_agents)
        self.state_dim = mid_state_dim(task.n_agents)
        self.act_dim = 3
        self.weights = weights or MidRewardWeights()
        self.scenario = scenario
        self.n_obstacles = n_obstacles
        self.timeout = timeout or (task.timeout_mid if scenario == "free" else task.timeout_long)
        self.threshold = task.subgoal_threshold if scenario == "free" else task.target_threshold
        self.friction_range = (0.2, 1.0)  # curricula may narrow this per reset
        self._rngs = _spawn_rngs(seed, n_envs)
        self._eps: list[_Episode] = []

    def _new_episode(self, i: int) -> _Episode:
        rng = self._rngs[i]
        if self.scenario == "free":
            world, subgoal = reset_mid(self.task, rng, self.friction_range)
            return _Episode(world, subgoal)
        for _ in range(50):
            try:
                world, goal, _m, _ref = reset_long(
                    self.task, rng, self.n_obstacles, training=True,
                    friction_range=self.friction_range,
                )
                return _Episode(world, goal)
            except (NoPath, SpawnCollision):
                continue
        raise SpawnCollision("could not initialize a long-horizon episode")

    def _obs(self) -> tuple[np.ndarray, np.ndarray]:
        E, N = self.n_envs, self.n_agents
        obs = np.empty((E, N, self.obs_dim))
        state = np.empty((E, self.state_dim))
        for i, ep in enumerate(self._eps):
            for a in range(N):
                obs[i, a] = build_mid_obs(ep.world, a, ep.target)
            state[i] = build_mid_state(ep.world, ep.target)
        return obs, state

    def reset_all(self) -> tuple[np.ndarray, np.ndarray]:
        self._eps = [self._new_episode(i) for i in range(self.n_envs)]
        return self._obs()

    def step(self, actions: np.ndarray):
        E, N = self.n_envs, self.n_agents
        rewards = np.zeros((E, N))
        dones = np.zeros(E, dtype=bool)
        records: list[dict] = []
        for i, ep in enumerate(self._eps):
            cmds = [tuple(actions[i, a]) for a in range(N)]
            new_world, events = step(ep.world, cmds)
            events = inject_timeout(events, new_world, self.timeout)
            for a in range(N):
                rewards[i, a] = mid_reward(
                    ep.world, new_world, events, ep.target, a, self.weights
                ).total
            term = termination(new_world, events, ep.target, self.threshold, self.timeout)
            ep.world = new_world
            ep.ep_return += float(rewards[i].mean())
            ep.length += 1
            if term.done:
                dones[i] = True
                records.append(
                    {
                        "return": ep.ep_return,
                        "length": ep.length,
                        "success": term.status is Status.SUCCESS,
                        "failure_kind": term.failure_kind,
                    }
                )
                self._eps[i] = self._new_episode(i)
        obs, state = self._obs()
        return obs, state, rewards, dones, records


class HighVecEnv:
    """Subgoal-proposal environment for PPO training of the adaptive policy.

    The frozen mid-level policy turns the active subgoal into velocity
    commands; one high-level decision spans `decision_period` simulator steps.
    Training episodes use synthetic curved references with strip obstacles.
    """

    n_agents = 1
    act_dim = 2

    def __init__(
        self,
        task: TaskSpec,
        n_envs: int,
        seed: int,
        mid_policy: GaussianPolicy,
        weights: HighRewardWeights | None = None,
        n_obstacles: int = 6,
        decision_period: int = 1,
        timeout: float | None = None,
    ):
        self.task = task
        self.n_envs = n_envs
        self.obs_dim = high_obs_dim(task.n_agents)
        self.state_dim = self.obs_dim + 2  # critic also sees the friction draws
        self.mid_policy = mid_policy
        self.weights = weights or HighRewardWeights()
        self.n_obstacles = n_obstacles
        self.decision_period = decision_period
        self.timeout = timeout or task.timeout_long
        self._rngs = _spawn_rngs(seed, n_envs)
        self._eps: list[_Episode] = []

    def _new_episode(self, i: int) -> _Episode:
        rng = self._rngs[i]
        for _ in range(50):
            try:
                world, goal, _m, ref = reset_long(
                    self.task, rng, self.n_obstacles, training=True
                )
                return _Episode(world, goal, path=ref)
            except (NoPath, SpawnCollision):
                continue
        raise SpawnCollision("could not initialize a long-horizon episode")

    def _obs(self) -> tuple[np.ndarray, np.ndarray]:
        obs = np.empty((self.n_envs, 1, self.obs_dim))
        state = np.empty((self.n_envs, self.state_dim))
        for i, ep in enumerate(self._eps):
            obs[i, 0] = build_high_obs(ep.world, ep.target, ep.path)
            state[i, : self.obs_dim] = obs[i, 0]
            state[i, self.obs_dim] = ep.world.object.mu_ground
            state[i, self.obs_dim + 1] = ep.world.object.mu_contact
        return obs, state

    def reset_all(self) -> tuple[np.ndarray, np.ndarray]:
        self._eps = [self._new_episode(i) for i in range(self.n_envs)]
        return self._obs()

    def step(self, actions: np.ndarray):
        E = self.n_envs
        N = self.task.n_agents
        subgoals = [
            subgoal_from_action(self._eps[i].world, actions[i, 0]) for i in range(E)
        ]
        rewards = np.zeros((E, 1))
        dones = np.zeros(E, dtype=bool)
        records: list[dict] = []
        terms = [None] * E
        events_union = [frozenset()] * E
        for _ in range(self.decision_period):
            mid_obs = np.empty((E * N, mid_obs_dim(N)))
            for i, ep in enumerate(self._eps):
                for a in range(N):
                    mid_obs[i * N + a] = build_mid_obs(ep.world, a, subgoals[i])
            cmds = self.mid_policy.mean_clamped(mid_obs).reshape(E, N, 3)
            for i, ep in enumerate(self._eps):
                if terms[i] is not None:
                    continue
                new_world, events = step(ep.world, [tuple(c) for c in cmds[i]])
                events = inject_timeout(events, new_world, self.timeout)
                events_union[i] = events_union[i] | events.exceptions
                ep.world = new_world
                ep.length += 1
                term = termination(
                    new_world, events, ep.target, self.task.target_threshold, self.timeout
                )
                if term.done:
                    terms[i] = term
        for i, ep in enumerate(self._eps):
            ev = StepEvents(frozenset(events_union[i]), ())
            r = high_reward(ep.world, ev, ep.target, ep.path, subgoals[i], self.weights)
            rewards[i, 0] = r.total
            ep.ep_return += r.total
            term = terms[i]
            if term is not None:
                dones[i] = True
                records.append(
                    {
                        "return": ep.ep_return,
                        "length": ep.length,
                        "success": term.status is Status.SUCCESS,
                        "failure_kind": term.failure_kind,
                    }
                )
                self._eps[i] = self._new_episode(i)
        obs, state = self._obs()
        return obs, state, rewards, dones, records


class RobotGoalVecEnv:
    """Per-robot navigation-target environment (subgoal-per-robot scheme).

    The policy proposes a 2D offset per robot; a proportional point-tracking
    controller (gain 1, clamped to the action bounds) turns the target into
    velocity commands. Rewards follow the high-level table without the
    path-following row (there is no reference trajectory); `heuristic_analogs`
    adds per-robot approach/velocity/occlusion terms toward the final goal.
    """

    act_dim = 2

    def __init__(
        self,
        task: TaskSpec,
        n_envs: int,
        seed: int,
        heuristic_analogs: bool = False,
        n_obstacles: int = 6,
        timeout: float | None = None,
    ):
        self.task = task
        self.n_envs = n_envs
        self.n_agents = task.n_agents
        self.obs_dim = mid_obs_dim(task.n_agents)
        self.state_dim = mid_state_dim(task.n_agents)
        self.heuristic_analogs = heuristic_analogs
        self.n_obstacles = n_obstacles
        self.timeout = timeout or task.timeout_long
        self.high_w = HighRewardWeights()
        self.mid_w = MidRewardWeights()
        self._rngs = _spawn_rngs(seed, n_envs)
        self._eps: list[_Episode] = []

    def _new_episode(self, i: int) -> _Episode:
        rng = self._rngs[i]
        for _ in range(50):
            try:
                world, goal, _m, _ref = reset_long(
                    self.task, rng, self.n_obstacles, training=True
                )
                return _Episode(world, goal)
            except (NoPath, SpawnCollision):
                continue
        raise SpawnCollision("could not initialize a long-horizon episode")

    def _obs(self):
        E, N = self.n_envs, self.n_agents
        obs = np.empty((E, N, self.obs_dim))
        state = np.empty((E, self.state_dim))
        for i, ep in enumerate(self._eps):
            for a in range(N):
                obs[i, a] = build_mid_obs(ep.world, a, ep.target)
            state[i] = build_mid_state(ep.world, ep.target)
        return obs, state

    def reset_all(self):
        self._eps = [self._new_episode(i) for i in range(self.n_envs)]
        return self._obs()

    def step(self, actions: np.ndarray):
        E, N = self.n_envs, self.n_agents
        rewards = np.zeros((E, N))
        dones = np.zeros(E, dtype=bool)
        records: list[dict] = []
        for i, ep in enumerate(self._eps):
            cmds = []
            for a in range(N):
                rob = ep.world.robots[a]
                target = Vec2(
                    rob.pose.position.x + float(np.clip(actions[i, a, 0], -3, 3)),
                    rob.pose.position.y + float(np.clip(actions[i, a, 1], -3, 3)),
                )
                cmds.append(p_controller(rob, target))
            new_world, events = step(ep.world, cmds)
            events = inject_timeout(events, new_world, self.timeout)
            # path_follow is excluded below, so any placeholder path works
            hr = high_reward(new_world, events, ep.target, _DUMMY_PATH, ep.target, self.high_w)
            base = (
                hr.target_reach.weighted
                + hr.target_approach.weighted
                + hr.exception.weighted
                + hr.obstacle.weighted
            )
            for a in range(N):
                r = base
                if self.heuristic_analogs:
                    r += _heuristic_analog(new_world, a, ep.target, self.mid_w)
                rewards[i, a] = r
            term = termination(
                new_world, events, ep.target, self.task.target_threshold, self.timeout
            )
            ep.world = new_world
            ep.ep_return += float(rewards[i].mean())
            ep.length += 1
            if term.done:
                dones[i] = True
                records.append(
                    {
                        "return": ep.ep_return,
                        "length": ep.length,
                        "success": term.status is Status.SUCCESS,
                        "failure_kind": term.failure_kind,
                    }
                )
                self._eps[i] = self._new_episode(i)
        obs, state = self._obs()
        return obs, state, rewards, dones, records


_DUMMY_PATH = PathPolyline((Vec2(0.0, 0.0), Vec2(1.0, 0.0)))


def p_controller(rob, target: Vec2, gain: float = 1.0) -> tuple[float, float, float]:
    """Proportional point tracker: body-frame position error times gain,
    clamped to the action bounds; no yaw command."""
    err = to_local(rob.pose, target)
    return (
        min(max(gain * err.x, -ACTION_BOUNDS[0]), ACTION_BOUNDS[0]),
        min(max(gain * err.y, -ACTION_BOUNDS[1]), ACTION_BOUNDS[1]),
        0.0,
    )


def _heuristic_analog(world: WorldState, agent_i: int, goal: Vec2, w: MidRewardWeights) -> float:
    """Approach, object-velocity, and occlusion terms for per-robot subgoal
    policies, computed toward the final goal."""
    hull = world.world_hull
    rp = world.robots[agent_i].pose.position
    d_obj = closest_boundary_point(hull, rp).distance
    if hull.strictly_contains(rp):
        d_obj = 0.0
    r = -((d_obj + 0.5) ** 2) * w.object_approach
    if world.object.lin_vel.norm() > w.vel_threshold:
        r += w.object_vel
    r += _ocb_value(hull, rp, world.object.pose.position, goal) * w.ocb
    return r
