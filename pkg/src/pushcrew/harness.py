"""Experiment harness: training pipelines, evaluation, metrics, and the
comparison/ablation/scalability runners behind the CLI.

Artifacts land under an output root (env var PUSHCREW_OUT, default ./runs):

    <root>/<task>/<method>/seed<k>/mid.ckpt        pushing policy + critic
    <root>/<task>/<method>/seed<k>/high.ckpt       subgoal policy + critic
    <root>/<task>/<method>/seed<k>/train_mid.jsonl per-iteration stats
    <root>/<task>/<method>/eval/metrics.json       aggregate metrics
    <root>/<task>/<method>/eval/episodes.csv       one row per episode
    <root>/<task>/<method>/eval/trajectories/*.csv world snapshots

Metrics are a pure function of episodes.csv; a fixed master seed reproduces
every artifact byte for byte (timestamps appear only in run-log meta lines).
"""
from __future__ import annotations

import configparser
import csv
import hashlib
import json
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import METHODS, MethodPolicies, needs_high, run_baseline
from .envs import HighVecEnv, MidVecEnv, RobotGoalVecEnv
from .errors import MissingCheckpoint, NoPath, SpawnCollision, StartOrGoalBlocked
from .geom2d import Vec2
from .neural import (
    GaussianPolicy,
    load_params,
    mlp_init,
    mlp_to_arrays,
    policy_from_arrays,
    policy_to_arrays,
    save_params,
)
from .planner import MapInfo, PathPolyline, RrtConfig, plan_rrt
from .pushworld import ACTION_BOUNDS, Obstacle, snapshot_header, snapshot_row, step
from .rewards import HighRewardWeights, MidRewardWeights
from .tasks import (
    Status,
    TaskSpec,
    inject_timeout,
    make_object,
    reset_long,
    reset_mid,
    task_preset,
    termination,
)
from .trainer import PpoConfig, run_training

OUT_ENV_VAR = "PUSHCREW_OUT"


def default_out_root() -> Path:
    return Path(os.environ.get(OUT_ENV_VAR, "runs"))


@dataclass(frozen=True)
class TrainerPreset:
    """Desk-scale training configuration."""

    n_envs: int = 32
    rollout_len: int = 200
    epochs: int = 10
    minibatches: int = 4
    lr: float = 1e-3
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip: float = 0.2
    entropy_coef: float = 5e-4
    value_coef: float = 0.5
    critic_lr_scale: float = 2.0
    hidden: tuple[int, ...] = (128, 128)
    log_std_init: float = -1.0
    high_log_std_init: float = 0.0  # subgoal offsets explore at ~1 m scale
    mid_total_steps: int = 2_000_000
    high_total_steps: int = 400_000  # high-level decisions (each spans decision_period sim steps)
    decision_period: int = 5  # 10 Hz subgoal re-decision for desk runs
    n_obstacles: int = 6
    lr_final_scale: float = 0.25  # linear anneal target for both Adam rates
    friction_curriculum: bool = True  # ramp the upper friction bound over training
    log_std_floor: float = -1.2  # exploration floor during training
    max_grad_norm: float = 0.5
    target_kl: float = 0.02

    def ppo(self, seed: int) -> PpoConfig:
        return PpoConfig(
            n_envs=self.n_envs,
            lr=self.lr,
            gamma=self.gamma,
            gae_lambda=self.gae_lambda,
            epochs=self.epochs,
            rollout_len=self.rollout_len,
            value_coef=self.value_coef,
            clip=self.clip,
            entropy_coef=self.entropy_coef,
            minibatches=self.minibatches,
            critic_lr_scale=self.critic_lr_scale,
            log_std_floor=self.log_std_floor,
            max_grad_norm=self.max_grad_norm,
            target_kl=self.target_kl,
            seed=seed,
        )


@dataclass
class ExperimentConfig:
    task: str = "cuboid2"
    method: str = "ours"
    seeds: tuple[int, ...] = (0, 1)
    n_trials: int = 50
    timeout: float | None = None
    n_obstacles: int = 6
    eval_master_seed: int = 1000
    reward_overrides: dict = field(default_factory=dict)
    trainer: TrainerPreset = field(default_factory=TrainerPreset)
    out_dir: Path = field(default_factory=default_out_root)
    write_trajectories: bool = True

    def __post_init__(self):
        self.out_dir = Path(self.out_dir)
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ValueError("need at least one seed")
        if self.n_trials < 1:
            raise ValueError("n_trials must be at least 1")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")

    def mid_weights(self) -> MidRewardWeights:
        base = MidRewardWeights(**{
            k: v for k, v in self.reward_overrides.items()
            if k in MidRewardWeights.__dataclass_fields__
        }) if self.reward_overrides else MidRewardWeights()
        if self.method == "ours_no_ocb":
            base = base.without_ocb()
        if self.method == "ml":
            base = base.task_and_penalty_only()
        return base

    def high_weights(self) -> HighRewardWeights:
        fields_ = HighRewardWeights.__dataclass_fields__
        over = {k[5:]: v for k, v in self.reward_overrides.items() if k.startswith("high_") and k[5:] in fields_}
        return HighRewardWeights(**over) if over else HighRewardWeights()


def load_config(path: str | Path, **overrides) -> ExperimentConfig:
    """Read a flat `key = value` config file with [experiment], [trainer], and
    [rewards] sections; keyword overrides win over file values."""
    parser = configparser.ConfigParser()
    with open(path) as f:
        parser.read_file(f)
    exp: dict = {}
    sec = parser["experiment"] if parser.has_section("experiment") else {}
    for key in ("task", "method"):
        if key in sec:
            exp[key] = sec[key]
    if "seeds" in sec:
        exp["seeds"] = tuple(int(s) for s in sec["seeds"].replace(",", " ").split())
    for key in ("n_trials", "n_obstacles", "eval_master_seed"):
        if key in sec:
            exp[key] = int(sec[key])
    if "timeout" in sec:
        exp["timeout"] = float(sec["timeout"])
    if "out_dir" in sec:
        exp["out_dir"] = Path(sec["out_dir"])
    if "write_trajectories" in sec:
        exp["write_trajectories"] = sec.getboolean("write_trajectories")
    if parser.has_section("trainer"):
        tsec = parser["trainer"]
        tkw: dict = {}
        for key, conv in (
            ("n_envs", int), ("rollout_len", int), ("epochs", int), ("minibatches", int),
            ("lr", float), ("gamma", float), ("gae_lambda", float), ("clip", float),
            ("entropy_coef", float), ("value_coef", float), ("critic_lr_scale", float),
            ("log_std_init", float), ("mid_total_steps", int), ("high_total_steps", int),
            ("decision_period", int), ("n_obstacles", int), ("lr_final_scale", float),
            ("high_log_std_init", float),
            ("log_std_floor", float), ("max_grad_norm", float), ("target_kl", float),
        ):
            if key in tsec:
                tkw[key] = conv(tsec[key])
        if "friction_curriculum" in tsec:
            tkw["friction_curriculum"] = tsec.getboolean("friction_curriculum")
        if "hidden" in tsec:
            tkw["hidden"] = tuple(int(s) for s in tsec["hidden"].replace(",", " ").split())
        exp["trainer"] = TrainerPreset(**tkw)
    if parser.has_section("rewards"):
        exp["reward_overrides"] = {k: float(v) for k, v in parser["rewards"].items()}
    exp.update(overrides)
    return ExperimentConfig(**exp)


# ---------------------------------------------------------------------------
# checkpoint bookkeeping
# ---------------------------------------------------------------------------


def method_dir(cfg: ExperimentConfig, seed: int) -> Path:
    return cfg.out_dir / cfg.task / cfg.method / f"seed{seed}"


def mid_ckpt_path(cfg: ExperimentConfig, seed: int) -> Path:
    return method_dir(cfg, seed) / "mid.ckpt"


def high_ckpt_path(cfg: ExperimentConfig, seed: int) -> Path:
    return method_dir(cfg, seed) / "high.ckpt"


def file_sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _jsonl_logger(path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    f = open(path, "w")
    f.write(json.dumps({"type": "meta", "started_at": time.strftime("%Y-%m-%dT%H:%M:%S")}) + "\n")

    def log(stats):
        f.write(json.dumps(stats.to_dict(), sort_keys=True) + "\n")
        f.flush()

    return f, log


def _flat_budget(cfg: ExperimentConfig) -> int:
    """Single-level baselines consume the same total simulator-step budget as
    the two-level pipeline (high-level decisions each span decision_period
    simulator steps)."""
    t = cfg.trainer
    return t.mid_total_steps + t.high_total_steps * t.decision_period


# ---------------------------------------------------------------------------
# training commands
# ---------------------------------------------------------------------------


def _greedy_mid_sr(
    actor: GaussianPolicy,
    task: TaskSpec,
    scenario: str,
    n_obstacles: int,
    timeout: float,
    n_episodes: int,
    seed0: int = 424242,
) -> float:
    """Mean-action success rate on a fixed episode battery (model selection)."""
    from .baselines import HierarchicalController

    ctrl = HierarchicalController(actor, None)
    wins = 0
    for k in range(n_episodes):
        rng = _episode_rng(seed0, 0, k)
        if scenario == "free":
            setup = _free_setup(task, rng, timeout)
        else:
            try:
                setup = _long_setup(task, rng, n_obstacles, timeout)
            except NoPath:
                continue
        wins += run_episode(setup, ctrl, 0, k).success
    return wins / n_episodes


def cmd_train_mid(cfg: ExperimentConfig, seed: int, total_steps: int | None = None) -> Path:
    """Train the velocity-command policy for the configured method and seed.

    ours / ours_no_ocb / sa train subgoal reaching in free space; ml / ml_ft
    train directly on the long-horizon task conditioned on the final goal.
    The checkpoint keeps the best-evaluating parameters seen during the run.
    """
    if cfg.method in ("hl", "hl_ft"):
        raise ValueError("hl methods have no mid-level policy; use cmd_train_high")
    task = task_preset(cfg.task)
    t = cfg.trainer
    weights = cfg.mid_weights()
    if cfg.method in ("ml", "ml_ft"):
        scenario = "long"
        env = MidVecEnv(
            task, t.n_envs, seed, weights=weights, scenario="long",
            n_obstacles=t.n_obstacles,
            timeout=cfg.timeout or task.timeout_long,
        )
        steps = total_steps if total_steps is not None else _flat_budget(cfg)
        eval_every, eval_eps = 30, 8
    else:
        scenario = "free"
        env = MidVecEnv(
            task, t.n_envs, seed, weights=weights, scenario="free",
            timeout=cfg.timeout or task.timeout_mid,
        )
        steps = total_steps if total_steps is not None else t.mid_total_steps
        eval_every, eval_eps = 10, 32
    eval_timeout = env.timeout
    rng = np.random.default_rng(seed)
    actor = GaussianPolicy.create(
        env.obs_dim, 3, t.hidden, rng, bounds=ACTION_BOUNDS, log_std_init=t.log_std_init
    )
    critic = mlp_init([env.state_dim, *t.hidden, 1], rng)
    out = method_dir(cfg, seed)
    f, jlog = _jsonl_logger(out / "train_mid.jsonl")
    best = {"sr": -1.0, "arrays": None, "iteration": -1}
    select_best = steps >= 50_000  # skip the battery on tiny smoke budgets

    def snapshot(iteration):
        sr = _greedy_mid_sr(actor, task, scenario, t.n_obstacles, eval_timeout, eval_eps)
        if sr >= best["sr"]:
            arrays = {k: v.copy() for k, v in policy_to_arrays(actor, "actor.").items()}
            arrays.update({k: v.copy() for k, v in mlp_to_arrays(critic, "critic.").items()})
            best.update(sr=sr, arrays=arrays, iteration=iteration)
        return sr

    def log(stats):
        if select_best and stats.iteration % eval_every == 0:
            stats.eval_sr = snapshot(stats.iteration)
        jlog(stats)

    def schedule(frac, envs):
        if t.friction_curriculum:
            # easy (slippery) worlds first, the full range by mid-training
            hi = 0.45 + min(1.0, 2.0 * frac) * 0.55
            envs.friction_range = (0.2, hi)

    try:
        run_training(
            env, actor, critic, t.ppo(seed), steps,
            log_fn=log, schedule_fn=schedule, lr_final_scale=t.lr_final_scale,
        )
    finally:
        f.close()
    final_sr = snapshot(-1) if select_best else -1.0
    arrays = best["arrays"]
    if arrays is None:
        arrays = policy_to_arrays(actor, "actor.")
        arrays.update(mlp_to_arrays(critic, "critic."))
    path = mid_ckpt_path(cfg, seed)
    save_params(
        path,
        arrays,
        meta={
            "kind": "mid",
            "task": cfg.task,
            "method": cfg.method,
            "seed": seed,
            "steps": steps,
            "hidden": list(t.hidden),
            "obs_dim": env.obs_dim,
            "selected_iteration": best["iteration"],
            "selected_sr": best["sr"] if best["sr"] >= 0 else final_sr,
        },
    )
    return path


def load_mid_policy(path: Path) -> GaussianPolicy:
    if not Path(path).exists():
        raise MissingCheckpoint(f"mid checkpoint not found: {path}")
    arrays, _meta = load_params(path)
    return policy_from_arrays(arrays, "actor.")


def load_high_policy(path: Path) -> GaussianPolicy:
    if not Path(path).exists():
        raise MissingCheckpoint(f"high checkpoint not found: {path}")
    arrays, _meta = load_params(path)
    return policy_from_arrays(arrays, "actor.")


def _pipeline_sr(controller, task: TaskSpec, n_obstacles: int, timeout: float, n_eps: int, seed0: int = 535353) -> float:
    wins = 0
    for k in range(n_eps):
        rng = _episode_rng(seed0, 0, k)
        try:
            setup = _long_setup(task, rng, n_obstacles, timeout)
        except NoPath:
            continue
        wins += run_episode(setup, controller, 0, k).success
    return wins / n_eps


def cmd_train_high(cfg: ExperimentConfig, seed: int, total_steps: int | None = None) -> Path:
    """Train the subgoal layer: the adaptive object-subgoal policy for the
    hierarchical methods, or the per-robot target policy for hl / hl_ft.

    The mid-level checkpoint is loaded frozen; its file hash is checked after
    training to prove it was never touched. The saved checkpoint keeps the
    best-evaluating parameters seen during the run.
    """
    from .baselines import HierarchicalController, RobotGoalController

    task = task_preset(cfg.task)
    t = cfg.trainer
    rng = np.random.default_rng(seed + 5000)
    out = method_dir(cfg, seed)
    timeout = cfg.timeout or task.timeout_long
    if cfg.method in ("hl", "hl_ft"):
        env = RobotGoalVecEnv(
            task, t.n_envs, seed,
            heuristic_analogs=(cfg.method == "hl_ft"),
            n_obstacles=t.n_obstacles,
            timeout=timeout,
        )
        actor = GaussianPolicy.create(
            env.obs_dim, 2, t.hidden, rng, bounds=[3.0, 3.0], log_std_init=t.high_log_std_init
        )
        critic = mlp_init([env.state_dim, *t.hidden, 1], rng)
        steps = total_steps if total_steps is not None else _flat_budget(cfg)
        make_controller = lambda: RobotGoalController(actor)
        kind = "robot_goal"
        mid_hash_before = None
        mid_path = None
    else:
        mid_path = mid_ckpt_path(cfg, seed)
        if not mid_path.exists():
            raise MissingCheckpoint(f"train_high needs a mid checkpoint at {mid_path}")
        mid_hash_before = file_sha256(mid_path)
        mid_policy = load_mid_policy(mid_path)
        env = HighVecEnv(
            task, t.n_envs, seed, mid_policy,
            weights=cfg.high_weights(),
            n_obstacles=t.n_obstacles,
            decision_period=t.decision_period,
            timeout=timeout,
        )
        actor = GaussianPolicy.create(
            env.obs_dim, 2, t.hidden, rng, bounds=[3.0, 3.0], log_std_init=t.high_log_std_init
        )
        critic = mlp_init([env.state_dim, *t.hidden, 1], rng)
        steps = total_steps if total_steps is not None else t.high_total_steps
        make_controller = lambda: HierarchicalController(
            mid_policy, actor, decision_period=t.decision_period
        )
        kind = "high"

    best = {"sr": -1.0, "arrays": None, "iteration": -1}
    eval_every, eval_eps = 25, 10
    select_best = steps >= 50_000

    def snapshot(iteration):
        sr = _pipeline_sr(make_controller(), task, t.n_obstacles, timeout, eval_eps)
        if sr >= best["sr"]:
            arrays = {k: v.copy() for k, v in policy_to_arrays(actor, "actor.").items()}
            arrays.update({k: v.copy() for k, v in mlp_to_arrays(critic, "critic.").items()})
            best.update(sr=sr, arrays=arrays, iteration=iteration)
        return sr

    def log(stats):
        if select_best and stats.iteration % eval_every == 0:
            stats.eval_sr = snapshot(stats.iteration)
        jlog(stats)

    f, jlog = _jsonl_logger(out / "train_high.jsonl")
    try:
        run_training(
            env, actor, critic, t.ppo(seed + 5000), steps,
            log_fn=log, lr_final_scale=t.lr_final_scale,
        )
    finally:
        f.close()
    if select_best:
        snapshot(-1)
    if mid_path is not None and file_sha256(mid_path) != mid_hash_before:
        raise RuntimeError("mid checkpoint changed during high-level training")
    arrays = best["arrays"]
    if arrays is None:
        arrays = policy_to_arrays(actor, "actor.")
        arrays.update(mlp_to_arrays(critic, "critic."))
    path = high_ckpt_path(cfg, seed)
    meta = {
        "kind": kind, "task": cfg.task, "method": cfg.method,
        "seed": seed, "steps": steps, "hidden": list(t.hidden),
        "selected_iteration": best["iteration"], "selected_sr": best["sr"],
    }
    if mid_hash_before is not None:
        meta["mid_sha256"] = mid_hash_before
    save_params(path, arrays, meta=meta)
    return path


def ensure_trained(cfg: ExperimentConfig, seed: int) -> MethodPolicies:
    """Load the method's policies, training any missing checkpoint first."""
    pols = MethodPolicies()
    if cfg.method in ("hl", "hl_ft"):
        p = high_ckpt_path(cfg, seed)
        if not p.exists():
            cmd_train_high(cfg, seed)
        pols.robot_goal = load_high_policy(p)
        return pols
    mp = mid_ckpt_path(cfg, seed)
    if not mp.exists():
        cmd_train_mid(cfg, seed)
    pols.mid = load_mid_policy(mp)
    if needs_high(cfg.method):
        hp = high_ckpt_path(cfg, seed)
        if not hp.exists():
            cmd_train_high(cfg, seed)
        pols.high = load_high_policy(hp)
    return pols


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EpisodeResult:
    success: bool
    completion_time_s: float
    normalized_ct: float
    failure_kind: str | None
    seed: int
    trial: int

    def row(self) -> list:
        return [
            int(self.success),
            self.completion_time_s,
            self.normalized_ct,
            self.failure_kind or "",
            self.seed,
            self.trial,
        ]


EPISODE_CSV_HEADER = ["success", "completion_time_s", "normalized_ct", "failure_kind", "seed", "trial"]


@dataclass
class EpisodeSetup:
    world: object
    goal: Vec2
    path: PathPolyline | None
    timeout: float
    threshold: float


def _long_setup(task: TaskSpec, rng: np.random.Generator, n_obstacles: int, timeout: float) -> EpisodeSetup:
    for _ in range(60):
        try:
            world, goal, _m, ref = reset_long(task, rng, n_obstacles, training=False)
            return EpisodeSetup(world, goal, ref, timeout, task.target_threshold)
        except (NoPath, StartOrGoalBlocked, SpawnCollision):
            continue
    raise NoPath("could not build an evaluation episode after 60 attempts")


def _free_setup(task: TaskSpec, rng: np.random.Generator, timeout: float) -> EpisodeSetup:
    world, subgoal = reset_mid(task, rng)
    return EpisodeSetup(world, subgoal, None, timeout, task.subgoal_threshold)


def run_episode(
    setup: EpisodeSetup,
    controller,
    seed: int,
    trial: int,
    traj_writer=None,
) -> EpisodeResult:
    """Step one episode to termination under a method controller."""
    world = setup.world
    controller.start_episode(world, setup.goal, setup.path)
    max_steps = int(round(setup.timeout / 0.02)) + 1
    if traj_writer is not None:
        traj_writer.writerow(snapshot_header(len(world.robots)))
    for _ in range(max_steps):
        cmds, subgoal = controller.act(world)
        world, events = step(world, cmds)
        events = inject_timeout(events, world, setup.timeout)
        if traj_writer is not None:
            traj_writer.writerow(snapshot_row(world, subgoal))
        term = termination(world, events, setup.goal, setup.threshold, setup.timeout)
        if term.done:
            success = term.status is Status.SUCCESS
            t = world.time if success else setup.timeout
            return EpisodeResult(
                success=success,
                completion_time_s=t,
                normalized_ct=min(t, setup.timeout) / setup.timeout,
                failure_kind=term.failure_kind,
                seed=seed,
                trial=trial,
            )
    return EpisodeResult(False, setup.timeout, 1.0, "timeout", seed, trial)


def aggregate_metrics(results: list[EpisodeResult]) -> dict:
    """Success rate and completion time, mean and population std across seeds."""
    seeds = sorted({r.seed for r in results})
    per_seed = []
    for s in seeds:
        rs = [r for r in results if r.seed == s]
        per_seed.append(
            {
                "seed": s,
                "n": len(rs),
                "success_rate": float(np.mean([r.success for r in rs])),
                "ct_mean_s": float(np.mean([r.completion_time_s for r in rs])),
                "normalized_ct": float(np.mean([r.normalized_ct for r in rs])),
            }
        )
    sr = np.array([p["success_rate"] for p in per_seed])
    ct = np.array([p["normalized_ct"] for p in per_seed])
    cts = np.array([p["ct_mean_s"] for p in per_seed])
    return {
        "n_episodes": len(results),
        "seeds": list(seeds),
        "per_seed": per_seed,
        "success_rate_mean": float(sr.mean()),
        "success_rate_std": float(sr.std()),
        "normalized_ct_mean": float(ct.mean()),
        "normalized_ct_std": float(ct.std()),
        "ct_seconds_mean": float(cts.mean()),
        "ct_seconds_std": float(cts.std()),
    }


def write_metrics(path: Path, metrics: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(metrics, sort_keys=True, indent=2) + "\n")


def write_episode_csv(path: Path, results: list[EpisodeResult]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(EPISODE_CSV_HEADER)
        for r in results:
            w.writerow(r.row())


def read_episode_csv(path: Path) -> list[EpisodeResult]:
    out = []
    with open(path) as f:
        rd = csv.DictReader(f)
        for row in rd:
            out.append(
                EpisodeResult(
                    success=bool(int(row["success"])),
                    completion_time_s=float(row["completion_time_s"]),
                    normalized_ct=float(row["normalized_ct"]),
                    failure_kind=row["failure_kind"] or None,
                    seed=int(row["seed"]),
                    trial=int(row["trial"]),
                )
            )
    return out


def _episode_rng(master: int, seed: int, trial: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((master, seed, trial))))


def cmd_eval(cfg: ExperimentConfig, scenario: str = "long", tag: str = "eval") -> dict:
    """Evaluate the configured method over n_trials episodes per seed.

    scenario "long" uses obstacle maps with an RRT reference; "free" evaluates
    subgoal reaching on the mid-level task.
    """
    task = task_preset(cfg.task)
    out = cfg.out_dir / cfg.task / cfg.method / tag
    results: list[EpisodeResult] = []
    for seed in cfg.seeds:
        pols = ensure_trained(cfg, seed)
        controller = run_baseline(cfg.method, pols, cfg.trainer.decision_period)
        for trial in range(cfg.n_trials):
            rng = _episode_rng(cfg.eval_master_seed, seed, trial)
            if scenario == "free":
                timeout = cfg.timeout or task.timeout_mid
                setup = _free_setup(task, rng, timeout)
            else:
                timeout = cfg.timeout or task.timeout_long
                setup = _long_setup(task, rng, cfg.n_obstacles, timeout)
            tw = None
            fh = None
            if cfg.write_trajectories:
                tdir = out / "trajectories"
                tdir.mkdir(parents=True, exist_ok=True)
                fh = open(tdir / f"s{seed}_t{trial}.csv", "w", newline="")
                tw = csv.writer(fh)
            try:
                results.append(run_episode(setup, controller, seed, trial, tw))
            finally:
                if fh is not None:
                    fh.close()
    metrics = aggregate_metrics(results)
    metrics["task"] = cfg.task
    metrics["method"] = cfg.method
    write_metrics(out / "metrics.json", metrics)
    write_episode_csv(out / "episodes.csv", results)
    return metrics


# ---------------------------------------------------------------------------
# experiment runners
# ---------------------------------------------------------------------------


def cmd_ablate_ocb(cfg: ExperimentConfig, timeouts: tuple[float, ...] = (20.0, 40.0)) -> dict:
    """Train the full and no-occlusion mid-level variants with identical
    budgets and seeds on the free-space task, then evaluate both under each
    timeout. Returns the 2 x len(timeouts) comparison table."""
    table: dict = {"task": cfg.task, "timeouts": list(timeouts), "arms": {}}
    for method in ("ours", "ours_no_ocb"):
        arm_cfg = _with(cfg, method=method)
        for seed in arm_cfg.seeds:
            if not mid_ckpt_path(arm_cfg, seed).exists():
                cmd_train_mid(arm_cfg, seed)
        arm: dict = {}
        for timeout in timeouts:
            ev_cfg = _with(arm_cfg, timeout=timeout)
            metrics = cmd_eval(ev_cfg, scenario="free", tag=f"eval_t{int(timeout)}")
            arm[f"timeout_{int(timeout)}"] = {
                "success_rate_mean": metrics["success_rate_mean"],
                "success_rate_std": metrics["success_rate_std"],
                "ct_seconds_mean": metrics["ct_seconds_mean"],
                "ct_seconds_std": metrics["ct_seconds_std"],
            }
        table["arms"][method] = arm
    write_metrics(cfg.out_dir / cfg.task / "ocb_ablation.json", table)
    return table


def cmd_scale_sweep(cfg: ExperimentConfig, agent_counts: tuple[int, ...] = (1, 2, 3, 4)) -> dict:
    """Evaluate the hierarchical pipeline on the cylinder task for each robot
    count, training per-N policies when missing."""
    table: dict = {"method": cfg.method, "by_n": {}}
    rows = []
    for n in agent_counts:
        n_cfg = _with(cfg, task=f"cyl{n}")
        metrics = cmd_eval(n_cfg, scenario="long")
        table["by_n"][n] = {
            "success_rate_mean": metrics["success_rate_mean"],
            "success_rate_std": metrics["success_rate_std"],
            "normalized_ct_mean": metrics["normalized_ct_mean"],
            "normalized_ct_std": metrics["normalized_ct_std"],
        }
        rows.append([n, metrics["success_rate_mean"], metrics["normalized_ct_mean"]])
    out = cfg.out_dir / "scale_sweep"
    write_metrics(out / "table.json", table)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "table.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["n_agents", "success_rate_mean", "normalized_ct_mean"])
        w.writerows(rows)
    return table


def _with(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    base = dict(
        task=cfg.task,
        method=cfg.method,
        seeds=cfg.seeds,
        n_trials=cfg.n_trials,
        timeout=cfg.timeout,
        n_obstacles=cfg.n_obstacles,
        eval_master_seed=cfg.eval_master_seed,
        reward_overrides=dict(cfg.reward_overrides),
        trainer=cfg.trainer,
        out_dir=cfg.out_dir,
        write_trajectories=cfg.write_trajectories,
    )
    base.update(kw)
    return ExperimentConfig(**base)


# ---------------------------------------------------------------------------
# corridor map suite (adaptive-vs-reference ablation)
# ---------------------------------------------------------------------------


def corridor_setup(task: TaskSpec, rng: np.random.Generator, timeout: float) -> EpisodeSetup:
    """A wall of obstacles across the room with one narrow gap between the
    object's start and the goal; the planned reference must thread the gap."""
    from .pushworld import WorldState, randomize_friction
    from .tasks import _spawn_robots

    gap_center = float(rng.uniform(-3.0, 3.0))
    gap_centers = float(rng.uniform(2.6, 3.0))  # distance between inner obstacle centers
    obstacles = []
    for sign in (1.0, -1.0):
        y = gap_center + sign * gap_centers / 2.0
        while abs(y) < 11.0:
            obstacles.append(Obstacle(Vec2(0.0, y)))
            y += sign * 1.0
    start = Vec2(float(rng.uniform(-9.0, -7.5)), float(rng.uniform(gap_center - 3, gap_center + 3)))
    goal = Vec2(float(rng.uniform(7.5, 9.0)), float(rng.uniform(gap_center - 3, gap_center + 3)))
    yaw = float(rng.uniform(-math.pi, math.pi))
    from .geom2d import Pose2

    obj = make_object(task.object_kind, task.object_mass, task.object_size, Pose2(start, yaw))
    inflation = 0.8 * obj.footprint.circumradius
    mapinfo = MapInfo(task.room, tuple(obstacles), inflation)
    ref = plan_rrt(mapinfo, start, goal, RrtConfig(seed=int(rng.integers(0, 2**31)), max_iters=20000))
    probe = WorldState(robots=(), object=obj, obstacles=tuple(obstacles), bounds=task.room)
    robots = _spawn_robots(task, rng, start, probe.world_parts, obstacles, task.room)
    world = WorldState(robots=tuple(robots), object=obj, obstacles=tuple(obstacles), bounds=task.room)
    world = randomize_friction(world, rng)
    return EpisodeSetup(world, goal, ref, timeout, task.target_threshold)


def eval_on_corridors(
    cfg: ExperimentConfig, n_maps: int = 50, map_seed: int = 7000
) -> dict:
    """Evaluate the configured method on constructed narrow-corridor maps."""
    task = task_preset(cfg.task)
    timeout = cfg.timeout or task.timeout_long
    results: list[EpisodeResult] = []
    for seed in cfg.seeds:
        pols = ensure_trained(cfg, seed)
        controller = run_baseline(cfg.method, pols, cfg.trainer.decision_period)
        for trial in range(n_maps):
            rng = _episode_rng(map_seed, seed, trial)
            for _ in range(40):
                try:
                    setup = corridor_setup(task, rng, timeout)
                    break
                except (NoPath, StartOrGoalBlocked, SpawnCollision):
                    continue
            else:
                raise NoPath("corridor map construction failed")
            results.append(run_episode(setup, controller, seed, trial))
    metrics = aggregate_metrics(results)
    metrics["task"] = cfg.task
    metrics["method"] = cfg.method
    out = cfg.out_dir / cfg.task / cfg.method / "corridors"
    write_metrics(out / "metrics.json", metrics)
    write_episode_csv(out / "episodes.csv", results)
    return metrics
