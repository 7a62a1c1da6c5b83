"""Command-line interface: ``python -m vigan <subcommand>``.

Settings come from ``--config path`` (a JSON document) with individual flags
overriding it; everything not given falls back to the config defaults.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from ..demos import save_demos
from .config import DEMO_TRANSFORMS, METHODS, ExperimentConfig
from .report import table_from_csv, table_from_runs, table_text, write_report
from .runner import (
    RunLock,
    eval_checkpoint,
    imitate,
    ingest_frames,
    injectivity_text,
    record_demos,
    train_expert,
    verify_injectivity,
)

# flag -> top-level config field
_TOP_FLAGS = {
    "env": "env", "method": "method", "seed": "seed", "iterations": "iterations", "rollout_steps": "rollout_steps",
    "workers": "workers", "demos": "demo_path", "demo_transform": "demo_transform", "checkpoint": "checkpoint",
    "n_trajs": "n_trajs", "modality": "modality", "k_frames": "k_frames", "eval_every": "eval_every",
    "eval_episodes": "eval_episodes", "stop_at_return": "stop_at_return", "output": "output_dir",
}
_RENDER_FLAGS = {"width": "width", "height": "height", "channels": "channels", "render_mode": "mode",
                 "crop_shake_max": "crop_shake_max"}


def _add_config_flags(p: argparse.ArgumentParser, method: bool = True) -> None:
    g = p.add_argument_group("experiment settings")
    g.add_argument("--config", help="JSON config document; flags below override it")
    g.add_argument("--env")
    if method:
        g.add_argument("--method", choices=METHODS)
    g.add_argument("--seed", type=int)
    g.add_argument("--iterations", type=int)
    g.add_argument("--rollout-steps", type=int)
    g.add_argument("--workers", type=int)
    g.add_argument("--demos", help="VIGD demonstration file")
    g.add_argument("--demo-transform", choices=DEMO_TRANSFORMS)
    g.add_argument("--checkpoint", help="VGNP policy checkpoint, or 'scripted' for the point_mass controller")
    g.add_argument("--n-trajs", type=int)
    g.add_argument("--modality", choices=("state_action", "state_only", "frames"))
    g.add_argument("--export-frames", action="store_true", default=None, help="also write PPM frames")
    g.add_argument("--k-frames", type=int, choices=(2, 3))
    g.add_argument("--width", type=int)
    g.add_argument("--height", type=int)
    g.add_argument("--channels", type=int, choices=(1, 3))
    g.add_argument("--render-mode", choices=("injective", "occluding", "axis_degenerate"))
    g.add_argument("--crop-shake-max", type=float)
    g.add_argument("--fast", action="store_true", help="32x32 grey frames")
    g.add_argument("--eval-every", type=int)
    g.add_argument("--eval-episodes", type=int)
    g.add_argument("--stop-at-return", type=float)
    g.add_argument("--output", help="output directory")


def config_from_args(args: argparse.Namespace, **forced) -> ExperimentConfig:
    base = ExperimentConfig.load(args.config) if getattr(args, "config", None) else ExperimentConfig()
    d = base.to_dict()
    for flag, name in _TOP_FLAGS.items():
        v = getattr(args, flag, None)
        if v is not None:
            d[name] = v
    if getattr(args, "export_frames", None):
        d["export_frames"] = True
    render = dict(d["render"])
    if getattr(args, "fast", False):
        render.update(width=32, height=32, channels=1)
    for flag, name in _RENDER_FLAGS.items():
        v = getattr(args, flag, None)
        if v is not None:
            render[name] = v
    d["render"] = render
    d.update(forced)
    return ExperimentConfig.from_dict(d)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vigan", description="Adversarial imitation from video, at desk scale.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-expert", help="TRPO on the true reward")
    _add_config_flags(p, method=False)

    p = sub.add_parser("record-demos", help="roll out an expert checkpoint into a VIGD file")
    _add_config_flags(p)

    p = sub.add_parser("imitate", help="run one imitation method against recorded demos")
    _add_config_flags(p)

    p = sub.add_parser("ingest-frames", help="pack a directory of PPM frames into a VIGD frames file")
    _add_config_flags(p)
    p.add_argument("--frames-dir", required=True)
    p.add_argument("--crop", type=int, nargs=4, metavar=("X", "Y", "W", "H"), help="crop rectangle in pixels")

    p = sub.add_parser("verify-injectivity", help="exhaustive frame-collision and discriminator-equivalence check")
    _add_config_flags(p)
    p.add_argument("--policy-pairs", type=int, default=5)
    p.add_argument("--points-per-axis", type=int)

    p = sub.add_parser("eval", help="evaluate a policy checkpoint with deterministic episodes")
    _add_config_flags(p)

    p = sub.add_parser("report", help="summary table over finished runs")
    p.add_argument("runs", nargs="*", help="run output directories")
    p.add_argument("--from-csv", help="regenerate the table from a report CSV")
    p.add_argument("--output", default=".", help="directory for report.txt and report.csv")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _dispatch(args) -> int:
    cmd = args.command
    if cmd == "report":
        if args.from_csv:
            table = table_from_csv(Path(args.from_csv).read_text())
        else:
            table = table_from_runs(args.runs)
        write_report(table, args.output)
        print(table_text(table), end="")
        return 0
    if cmd == "train-expert":
        res = train_expert(config_from_args(args, method="expert_trpo"))
        print(f"expert mean return {res.summary['mean_return']:.2f} +- {res.summary['std_return']:.2f}")
        return 0
    config = config_from_args(args)
    if cmd == "record-demos":
        demos = record_demos(config)
        print(f"recorded {len(demos.trajectories)} {demos.modality} trajectories to "
              f"{Path(config.output_dir) / 'demos.vigd'}")
    elif cmd == "imitate":
        res = imitate(config)
        print(f"{config.method} mean return {res.summary['mean_return']:.2f} +- {res.summary['std_return']:.2f}")
    elif cmd == "ingest-frames":
        demos = ingest_frames(args.frames_dir, config.env, config.render, args.crop)
        with RunLock(config.output_dir):
            save_demos(demos, Path(config.output_dir) / "demos.vigd")
        print(f"ingested {len(demos.trajectories[0].frames)} frames to {Path(config.output_dir) / 'demos.vigd'}")
    elif cmd == "verify-injectivity":
        result = verify_injectivity(config.env, config.render, config.seed, args.policy_pairs, args.points_per_axis)
        doc = {k: result[k] for k in ("injective", "max_abs_diff", "collisions")}
        with RunLock(config.output_dir):
            (Path(config.output_dir) / "injectivity.json").write_text(json.dumps(doc, indent=2) + "\n")
        print(injectivity_text(result), end="")
        print(json.dumps(doc))
    elif cmd == "eval":
        s = eval_checkpoint(config)
        print(f"mean return {s['mean_return']:.2f} +- {s['std_return']:.2f} over {s['eval_episodes']} episodes")
    return 0


if __name__ == "__main__":
    sys.exit(main())
