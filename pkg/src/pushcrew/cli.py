"""Command-line entry point.

Subcommands: train-mid, train-high, eval, ablate-ocb, scale-sweep, plan,
baseline. Shared flags: --config (key = value file), --task, --method,
--seed (repeatable), --out. The output root falls back to $PUSHCREW_OUT,
then ./runs.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .errors import PushCrewError
from .geom2d import Vec2


def _base_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="experiment config file")
    p.add_argument("--task", help="task preset name (e.g. cuboid2, tshape2, cyl3)")
    p.add_argument("--method", help="method name (ours, ml_ft, hl, rrt_only, ...)")
    p.add_argument("--seed", type=int, action="append", help="training/eval seed (repeatable)")
    p.add_argument("--out", type=Path, help="output root directory")
    p.add_argument("--trials", type=int, help="evaluation episodes per seed")
    p.add_argument("--timeout", type=float, help="episode timeout override (s)")


def _load_cfg(args):
    from .harness import ExperimentConfig, load_config

    overrides = {}
    if args.task:
        overrides["task"] = args.task
    if args.method:
        overrides["method"] = args.method
    if args.seed:
        overrides["seeds"] = tuple(args.seed)
    if args.out:
        overrides["out_dir"] = args.out
    if getattr(args, "trials", None):
        overrides["n_trials"] = args.trials
    if getattr(args, "timeout", None):
        overrides["timeout"] = args.timeout
    if args.config:
        return load_config(args.config, **overrides)
    return ExperimentConfig(**overrides)


def cmd_train_mid(args) -> int:
    from .harness import cmd_train_mid as train

    cfg = _load_cfg(args)
    for seed in cfg.seeds:
        path = train(cfg, seed, total_steps=args.steps)
        print(f"seed {seed}: wrote {path}")
    return 0


def cmd_train_high(args) -> int:
    from .harness import cmd_train_high as train

    cfg = _load_cfg(args)
    for seed in cfg.seeds:
        path = train(cfg, seed, total_steps=args.steps)
        print(f"seed {seed}: wrote {path}")
    return 0


def cmd_eval(args) -> int:
    from .harness import cmd_eval as ev

    cfg = _load_cfg(args)
    metrics = ev(cfg, scenario=args.scenario)
    print(json.dumps(metrics, sort_keys=True, indent=2))
    return 0


def cmd_ablate(args) -> int:
    from .harness import cmd_ablate_ocb as ablate

    cfg = _load_cfg(args)
    table = ablate(cfg, timeouts=tuple(args.ablate_timeout or (20.0, 40.0)))
    print(json.dumps(table, sort_keys=True, indent=2))
    return 0


def cmd_scale(args) -> int:
    from .harness import cmd_scale_sweep as sweep

    cfg = _load_cfg(args)
    table = sweep(cfg, agent_counts=tuple(args.agents or (1, 2, 3, 4)))
    print(json.dumps(table, sort_keys=True, indent=2))
    return 0


def cmd_plan(args) -> int:
    """Read a map file and print the planned waypoints as CSV.

    Map file format (key = value):
        [map]
        bounds = -12 -12 12 12
        inflation = 0.6
        start = -10 0
        goal = 10 0
        obstacles = 0 0, 2 3, -1 4
    """
    import configparser

    from .planner import MapInfo, RrtConfig, plan_rrt
    from .pushworld import Obstacle, Rect

    parser = configparser.ConfigParser()
    with open(args.map_file) as f:
        parser.read_file(f)
    sec = parser["map"]
    bx = [float(v) for v in sec["bounds"].split()]
    start = Vec2(*[float(v) for v in sec["start"].split()])
    goal = Vec2(*[float(v) for v in sec["goal"].split()])
    obstacles = []
    if "obstacles" in sec and sec["obstacles"].strip():
        for chunk in sec["obstacles"].split(","):
            x, y = (float(v) for v in chunk.split())
            obstacles.append(Obstacle(Vec2(x, y)))
    inflation = float(sec.get("inflation", "0.0"))
    m = MapInfo(Rect(*bx), tuple(obstacles), inflation)
    path = plan_rrt(m, start, goal, RrtConfig(seed=args.plan_seed))
    w = csv.writer(sys.stdout)
    w.writerow(["x", "y"])
    for p in path.waypoints:
        w.writerow([p.x, p.y])
    return 0


def cmd_baseline(args) -> int:
    """Run a handful of episodes for one method and print per-episode results."""
    from .harness import cmd_eval as ev

    cfg = _load_cfg(args)
    metrics = ev(cfg, scenario=args.scenario, tag="baseline")
    print(json.dumps(metrics, sort_keys=True, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pushcrew", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-mid", help="train the pushing policy")
    _base_flags(p)
    p.add_argument("--steps", type=int, help="override the env-step budget")
    p.set_defaults(fn=cmd_train_mid)

    p = sub.add_parser("train-high", help="train the subgoal policy (needs mid checkpoint)")
    _base_flags(p)
    p.add_argument("--steps", type=int, help="override the env-step budget")
    p.set_defaults(fn=cmd_train_high)

    p = sub.add_parser("eval", help="evaluate a method over trials x seeds")
    _base_flags(p)
    p.add_argument("--scenario", choices=("long", "free"), default="long")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate-ocb", help="train and compare full vs no-occlusion rewards")
    _base_flags(p)
    p.add_argument("--ablate-timeout", type=float, action="append")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("scale-sweep", help="cylinder task success vs robot count")
    _base_flags(p)
    p.add_argument("--agents", type=int, action="append")
    p.set_defaults(fn=cmd_scale)

    p = sub.add_parser("plan", help="plan a path on a map file and print CSV")
    p.add_argument("map_file", type=Path)
    p.add_argument("--plan-seed", type=int, default=0)
    p.set_defaults(fn=cmd_plan)

    p = sub.add_parser("baseline", help="run a method's controller for quick inspection")
    _base_flags(p)
    p.add_argument("--scenario", choices=("long", "free"), default="long")
    p.set_defaults(fn=cmd_baseline)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except PushCrewError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
