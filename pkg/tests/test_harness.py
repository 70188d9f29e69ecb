import json
import math
from pathlib import Path

import numpy as np
import pytest

from pushcrew.baselines import (
    HierarchicalController,
    MethodPolicies,
    RobotGoalController,
    run_baseline,
)
from pushcrew.errors import MissingCheckpoint
from pushcrew.geom2d import Pose2, Vec2
from pushcrew.harness import (
    EPISODE_CSV_HEADER,
    EpisodeResult,
    EpisodeSetup,
    ExperimentConfig,
    TrainerPreset,
    aggregate_metrics,
    cmd_eval,
    cmd_train_mid,
    corridor_setup,
    _free_setup,
    load_config,
    load_mid_policy,
    mid_ckpt_path,
    read_episode_csv,
    run_episode,
    write_episode_csv,
    write_metrics,
)
from pushcrew.neural import GaussianPolicy, mlp_init, mlp_to_arrays, policy_to_arrays, save_params
from pushcrew.planner import PathPolyline, nearest_on_path
from pushcrew.pushworld import ACTION_BOUNDS, RobotState, WorldState
from pushcrew.tasks import make_object, mid_obs_dim, ObjectKind, task_preset


def tiny_preset(**kw):
    base = dict(
        n_envs=2,
        rollout_len=8,
        epochs=2,
        minibatches=2,
        hidden=(16,),
        mid_total_steps=32,
        high_total_steps=16,
    )
    base.update(kw)
    return TrainerPreset(**base)


def cfg_for(tmp_path, **kw) -> ExperimentConfig:
    base = dict(
        task="cuboid2",
        method="ml_ft",
        seeds=(0,),
        n_trials=2,
        trainer=tiny_preset(),
        out_dir=tmp_path,
        write_trajectories=False,
    )
    base.update(kw)
    return ExperimentConfig(**base)


def make_mid_ckpt(cfg, seed, obs_dim):
    """Random (untrained) checkpoint with the right shapes."""
    rng = np.random.default_rng(99)
    actor = GaussianPolicy.create(obs_dim, 3, (16,), rng, bounds=ACTION_BOUNDS)
    critic = mlp_init([4, 16, 1], rng)
    arrays = policy_to_arrays(actor, "actor.")
    arrays.update(mlp_to_arrays(critic, "critic."))
    path = mid_ckpt_path(cfg, seed)
    save_params(path, arrays, meta={"kind": "mid"})
    return path


# ---------------------------------------------------------------------------
# scripted controllers for contract tests
# ---------------------------------------------------------------------------


class ZeroController:
    def start_episode(self, world, goal, path):
        self.n = len(world.robots)

    def act(self, world):
        return [(0.0, 0.0, 0.0)] * self.n, Vec2(0, 0)


class TeleportingOracle:
    """Scripted always-succeed policy for a trivial task: pushes are not
    needed because the goal sits within the success threshold."""

    def start_episode(self, world, goal, path):
        self.n = len(world.robots)

    def act(self, world):
        return [(0.0, 0.0, 0.0)] * self.n, Vec2(0, 0)


def free_setup_near_goal(task, rng, timeout=20.0, goal_dist=0.5):
    from pushcrew.tasks import reset_mid

    world, _ = reset_mid(task, rng)
    o = world.object.pose.position
    return EpisodeSetup(world, Vec2(o.x + goal_dist, o.y), None, timeout, 1.0)


# ---------------------------------------------------------------------------
# episode runner and metrics
# ---------------------------------------------------------------------------


def test_oracle_policy_scores_full_success():
    task = task_preset("cuboid2")
    results = []
    for trial in range(5):
        rng = np.random.default_rng(trial)
        setup = free_setup_near_goal(task, rng)
        results.append(run_episode(setup, TeleportingOracle(), seed=0, trial=trial))
    m = aggregate_metrics(results)
    assert m["success_rate_mean"] == 1.0
    assert m["normalized_ct_mean"] < 1.0


def test_zero_policy_times_out_with_ct_exactly_one():
    task = task_preset("cuboid2")
    results = []
    for trial in range(3):
        rng = np.random.default_rng(trial)
        setup = _free_setup(task, rng, timeout=1.0)
        results.append(run_episode(setup, ZeroController(), seed=0, trial=trial))
    assert all(not r.success for r in results)
    assert all(r.normalized_ct == 1.0 for r in results)
    assert all(r.failure_kind == "timeout" for r in results)
    m = aggregate_metrics(results)
    assert m["success_rate_mean"] == 0.0
    assert m["normalized_ct_mean"] == 1.0


def test_metrics_recompute_from_episode_csv(tmp_path):
    rng = np.random.default_rng(0)
    results = [
        EpisodeResult(
            success=bool(rng.integers(2)),
            completion_time_s=float(rng.uniform(5, 20)),
            normalized_ct=float(rng.uniform(0, 1)),
            failure_kind=None,
            seed=int(rng.integers(2)),
            trial=t,
        )
        for t in range(40)
    ]
    path = tmp_path / "episodes.csv"
    write_episode_csv(path, results)
    again = read_episode_csv(path)
    m1 = aggregate_metrics(results)
    m2 = aggregate_metrics(again)
    for key in ("success_rate_mean", "success_rate_std", "normalized_ct_mean", "ct_seconds_mean"):
        assert abs(m1[key] - m2[key]) < 1e-9


def test_normalized_ct_contract():
    r = EpisodeResult(False, 20.0, 1.0, "timeout", 0, 0)
    assert r.normalized_ct == 1.0
    task = task_preset("cuboid2")
    setup = free_setup_near_goal(task, np.random.default_rng(5), timeout=20.0)
    res = run_episode(setup, TeleportingOracle(), 0, 0)
    assert res.normalized_ct == pytest.approx(res.completion_time_s / 20.0)


# ---------------------------------------------------------------------------
# config files
# ---------------------------------------------------------------------------


def test_load_config_round_trip(tmp_path):
    p = tmp_path / "exp.cfg"
    p.write_text(
        """
[experiment]
task = tshape2
method = rrt_only
seeds = 3 4
n_trials = 7
timeout = 60.0

[trainer]
n_envs = 8
hidden = 32 32
lr = 1e-3
entropy_coef = 0.0

[rewards]
ocb = 0.002
alpha = 100
"""
    )
    cfg = load_config(p, out_dir=tmp_path)
    assert cfg.task == "tshape2"
    assert cfg.method == "rrt_only"
    assert cfg.seeds == (3, 4)
    assert cfg.n_trials == 7
    assert cfg.timeout == 60.0
    assert cfg.trainer.n_envs == 8
    assert cfg.trainer.hidden == (32, 32)
    assert cfg.trainer.lr == pytest.approx(1e-3)
    assert cfg.trainer.entropy_coef == 0.0
    w = cfg.mid_weights()
    assert w.ocb == pytest.approx(0.002)
    assert w.alpha == pytest.approx(100)


def test_reward_override_variants(tmp_path):
    cfg = cfg_for(tmp_path, method="ours_no_ocb")
    assert cfg.mid_weights().ocb == 0.0
    cfg = cfg_for(tmp_path, method="ml")
    w = cfg.mid_weights()
    assert w.ocb == 0.0 and w.object_approach == 0.0 and w.object_vel == 0.0


def test_bad_method_rejected(tmp_path):
    with pytest.raises(ValueError):
        cfg_for(tmp_path, method="nope")


# ---------------------------------------------------------------------------
# training commands (tiny budgets)
# ---------------------------------------------------------------------------


def test_train_mid_writes_checkpoint_and_log(tmp_path):
    cfg = cfg_for(tmp_path, method="ours", task="cuboid2")
    path = cmd_train_mid(cfg, seed=0)
    assert path.exists()
    pol = load_mid_policy(path)
    assert pol.mean_net.sizes[0] == mid_obs_dim(2)
    log = (path.parent / "train_mid.jsonl").read_text().strip().splitlines()
    assert json.loads(log[0])["type"] == "meta"
    assert len(log) >= 2
    stats = json.loads(log[1])
    assert "policy_loss" in stats and "clip_fraction" in stats


def test_train_zero_steps_checkpoint_is_init(tmp_path):
    cfg = cfg_for(tmp_path, method="ours")
    path = cmd_train_mid(cfg, seed=0, total_steps=0)
    pol = load_mid_policy(path)
    rng = np.random.default_rng(0)
    fresh = GaussianPolicy.create(
        mid_obs_dim(2), 3, cfg.trainer.hidden, rng,
        bounds=ACTION_BOUNDS, log_std_init=cfg.trainer.log_std_init,
    )
    for a, b in zip(pol.mean_net.flat_arrays(), fresh.mean_net.flat_arrays()):
        assert np.array_equal(a, b)


def test_train_rerun_same_seed_identical_log(tmp_path):
    cfg = cfg_for(tmp_path, method="ours")
    cmd_train_mid(cfg, seed=0, total_steps=64)
    log1 = (method_dir := mid_ckpt_path(cfg, 0).parent / "train_mid.jsonl").read_text()
    cmd_train_mid(cfg, seed=0, total_steps=64)
    log2 = (mid_ckpt_path(cfg, 0).parent / "train_mid.jsonl").read_text()
    strip = lambda text: [l for l in text.splitlines() if '"meta"' not in l]
    assert strip(log1) == strip(log2)


def test_train_high_requires_mid_checkpoint(tmp_path):
    cfg = cfg_for(tmp_path, method="ours")
    from pushcrew.harness import cmd_train_high

    with pytest.raises(MissingCheckpoint):
        cmd_train_high(cfg, seed=0)


def test_train_high_leaves_mid_untouched(tmp_path):
    from pushcrew.harness import cmd_train_high, file_sha256

    cfg = cfg_for(tmp_path, method="ours")
    mid = cmd_train_mid(cfg, seed=0, total_steps=32)
    before = file_sha256(mid)
    cmd_train_high(cfg, seed=0, total_steps=16)
    assert file_sha256(mid) == before


def test_hl_method_trains_without_mid(tmp_path):
    from pushcrew.harness import cmd_train_high, high_ckpt_path

    cfg = cfg_for(tmp_path, method="hl")
    path = cmd_train_high(cfg, seed=0, total_steps=16)
    assert path == high_ckpt_path(cfg, 0)
    assert path.exists()


# ---------------------------------------------------------------------------
# eval command determinism
# ---------------------------------------------------------------------------


def test_eval_missing_checkpoint_trains_on_demand(tmp_path):
    cfg = cfg_for(tmp_path, method="ml_ft", n_trials=1)
    metrics = cmd_eval(cfg, scenario="free")
    assert 0.0 <= metrics["success_rate_mean"] <= 1.0
    assert mid_ckpt_path(cfg, 0).exists()


def test_eval_byte_identical_for_same_master_seed(tmp_path):
    cfg = cfg_for(tmp_path, method="ml_ft", n_trials=2, seeds=(0,))
    cmd_train_mid(cfg, 0, total_steps=32)
    cmd_eval(cfg, scenario="free", tag="run1")
    cmd_eval(cfg, scenario="free", tag="run2")
    m1 = (tmp_path / "cuboid2/ml_ft/run1/metrics.json").read_bytes()
    m2 = (tmp_path / "cuboid2/ml_ft/run2/metrics.json").read_bytes()
    assert m1 == m2
    e1 = (tmp_path / "cuboid2/ml_ft/run1/episodes.csv").read_bytes()
    e2 = (tmp_path / "cuboid2/ml_ft/run2/episodes.csv").read_bytes()
    assert e1 == e2


# ---------------------------------------------------------------------------
# baseline dispatch
# ---------------------------------------------------------------------------


def test_rrt_only_lookahead_monotone_arclength():
    task = task_preset("cuboid2")
    rng = np.random.default_rng(2)
    mid = GaussianPolicy.create(mid_obs_dim(2), 3, (16,), rng, bounds=ACTION_BOUNDS)
    ctrl = run_baseline("rrt_only", MethodPolicies(mid=mid))
    path = PathPolyline((Vec2(-8, 0), Vec2(8, 0)))
    from pushcrew.tasks import reset_mid

    world, _ = reset_mid(task, rng)
    ctrl.start_episode(world, Vec2(8, 0), path)
    arcs = []
    from pushcrew.pushworld import step

    for _ in range(30):
        cmds, subgoal = ctrl.act(world)
        _, s = nearest_on_path(path, subgoal)
        arcs.append(s)
        world, _ev = step(world, cmds)
    assert all(b >= a - 1e-9 for a, b in zip(arcs, arcs[1:]))
    # lookahead rule: subgoal sits ahead of the object's projection
    _, s_obj = nearest_on_path(path, world.object.pose.position)
    assert arcs[-1] >= s_obj


def test_ours_with_high_disabled_equals_goal_conditioned_stream():
    task = task_preset("cuboid2")
    rng = np.random.default_rng(3)
    mid = GaussianPolicy.create(mid_obs_dim(2), 3, (16,), rng, bounds=ACTION_BOUNDS)
    a = HierarchicalController(mid, high_policy=None)
    b = run_baseline("ml_ft", MethodPolicies(mid=mid))
    from pushcrew.pushworld import step
    from pushcrew.tasks import reset_mid

    world, _ = reset_mid(task, rng)
    goal = Vec2(5, 1)
    a.start_episode(world, goal, None)
    b.start_episode(world, goal, None)
    wa = wb = world
    for _ in range(20):
        ca, sa = a.act(wa)
        cb, sb = b.act(wb)
        assert ca == cb
        assert (sa.x, sa.y) == (sb.x, sb.y)
        wa, _ = step(wa, ca)
        wb, _ = step(wb, cb)


def test_robot_goal_controller_zero_at_converged_target():
    rng = np.random.default_rng(4)
    pol = GaussianPolicy.create(mid_obs_dim(1), 2, (8,), rng, bounds=[3.0, 3.0])
    for w in pol.mean_net.weights:
        w[:] = 0.0
    ctrl = RobotGoalController(pol)
    obj = make_object(ObjectKind.CUBOID, 4.0, 1.2, Pose2(Vec2(3, 0), 0.0))
    world = WorldState(robots=(RobotState(Pose2(Vec2(0, 0), 0.0)),), object=obj)
    ctrl.start_episode(world, Vec2(5, 0), None)
    cmds, _ = ctrl.act(world)
    # zero offset -> target equals the robot position -> zero command
    assert cmds[0] == (0.0, 0.0, 0.0)


def test_corridor_setup_geometry():
    task = task_preset("tshape2")
    made = 0
    for k in range(12):
        rng = np.random.default_rng(k)
        try:
            setup = corridor_setup(task, rng, timeout=120.0)
        except Exception:
            continue
        made += 1
        xs = {o.center.x for o in setup.world.obstacles}
        assert xs == {0.0}
        ys = sorted(o.center.y for o in setup.world.obstacles)
        gaps = [b - a for a, b in zip(ys, ys[1:])]
        big = [g for g in gaps if g > 1.5]
        assert len(big) == 1  # exactly one corridor
        assert 2.6 - 1e-9 <= big[0] <= 3.0 + 1e-9
        assert setup.path is not None
    assert made >= 8
