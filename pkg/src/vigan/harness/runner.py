"""Experiment runners behind the CLI subcommands.

Every runner is a plain function of an :class:`ExperimentConfig`; given the
same config and seed it writes the same bytes. Outputs land in
``config.output_dir``, guarded by a lock file so that only one process writes
there at a time.
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..adversarial import (
    CSV_FIELDS,
    IterationReport,
    adversarial_iteration,
    check_modality,
    make_discriminator,
    make_optimizers,
)
from ..baselines import TripletSampler, bc_train, synced_iteration, tcn_train
from ..demos import DemoSet, DemoTrajectory, from_trajectories, load_demos, phase_shift, save_demos, shuffle_demos
from ..diffcore import Adam, load_params, save_params
from ..envs import (
    CartPoleAnalog,
    Env,
    GridMdp,
    RenderMap,
    make_env,
    point_mass_expert,
    read_ppm,
    resize_and_crop,
    to_grey,
    write_ppm,
)
from ..models import CategoricalMlpPolicy, GaussianMlpPolicy, TcnEncoder, ValueMlp
from ..oracle import equivalence_check, injectivity_check
from ..rollout import build_batch, collect, collect_episodes
from ..trpo import trpo_step
from .config import ConfigError, ExperimentConfig

RUN_FIELDS = ("method",) + CSV_FIELDS + ("eval_return",)
SUMMARY_FIELDS = ("run", "env", "method", "n_traj", "seed", "iterations", "eval_episodes", "mean_return",
                  "std_return")
VIDEO_METHODS = ("vigan", "pixel", "tcn")
SCRIPTED = "scripted"
EVAL_SEED_BASE = 1_000_000_007


class RunLockedError(RuntimeError):
    pass


class FrameIngestError(ValueError):
    pass


# ------------------------------------------------------------------ plumbing


class RunLock:
    """Exclusive lock file inside an output directory."""

    def __init__(self, directory):
        self.dir = Path(directory)
        self.path = self.dir / ".lock"

    def __enter__(self):
        self.dir.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise RunLockedError(f"{self.dir} is in use by another run (remove {self.path} if it is stale)") from None
        with os.fdopen(fd, "w") as f:
            f.write(f"{os.getpid()}\n")
        return self

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)
        return False


def fmt(x) -> str:
    """Round-trippable text for a CSV cell."""
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(r.get(k)) for k in header])
    return buf.getvalue()


def make_policy(env: Env, rng: np.random.Generator):
    s = env.spec
    if s.discrete:
        return CategoricalMlpPolicy(s.obs_dim, s.n_actions, rng)
    return GaussianMlpPolicy(s.obs_dim, s.action_dim, s.action_low, s.action_high, rng)


def load_policy(env: Env, checkpoint: str):
    """A policy from a VGNP checkpoint, or the scripted point-mass controller."""
    if checkpoint == SCRIPTED:
        if env.spec.id != "point_mass":
            raise ConfigError("the scripted expert exists only for point_mass")
        return point_mass_expert()
    policy = make_policy(env, np.random.default_rng(0))
    policy.load_state_dict(load_params(checkpoint))
    return policy


def evaluate(policy, env: Env, n_episodes: int, seed: int) -> tuple[float, float]:
    """Mean and std of the true return over deterministic episodes."""
    returns = [t.true_return for t in collect_episodes(policy, env, n_episodes, EVAL_SEED_BASE + seed,
                                                         deterministic=True)]
    return float(np.mean(returns)), float(np.std(returns))


@dataclass
class RunResult:
    summary: dict
    rows: list[dict] = field(default_factory=list)
    policy: object = None


class _Run:
    """Shared bookkeeping for iterative runs: CSV rows, periodic evaluation."""

    def __init__(self, config: ExperimentConfig, env: Env, n_traj: int):
        self.config, self.env, self.n_traj = config, env, n_traj
        self.out = Path(config.output_dir)
        self.rows: list[dict] = []
        self.csv = None

    def __enter__(self):
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / "config.json").write_text(self.config.to_json())
        self.csv = open(self.out / "run.csv", "w", newline="")
        self.csv.write(csv_text(RUN_FIELDS, []))
        return self

    def __exit__(self, *exc):
        self.csv.close()
        return False

    def log(self, report: IterationReport, policy) -> bool:
        """Record one iteration; returns True when the run should stop early."""
        c = self.config
        row = dict(report.row(), method=c.method, eval_return=None)
        stop = False
        if (report.iter + 1) % c.eval_every == 0:
            row["eval_return"], _ = evaluate(policy, self.env, c.eval_episodes, c.seed)
            stop = c.stop_at_return is not None and row["eval_return"] >= c.stop_at_return
        self.rows.append(row)
        self.csv.write(csv_text(RUN_FIELDS, [row]).split("\n", 1)[1])
        self.csv.flush()
        return stop

    def finish(self, policy) -> RunResult:
        c = self.config
        mean, std = evaluate(policy, self.env, c.eval_episodes, c.seed)
        summary = {"run": self.out.name, "env": c.env, "method": c.method, "n_traj": self.n_traj, "seed": c.seed,
                   "iterations": len(self.rows), "eval_episodes": c.eval_episodes, "mean_return": mean,
                   "std_return": std}
        (self.out / "summary.csv").write_text(csv_text(SUMMARY_FIELDS, [summary]))
        return RunResult(summary, self.rows, policy)


def _nan_report(i: int, true_return: float, est: float, kl=float("nan"), improvement=float("nan")):
    nan = float("nan")
    return IterationReport(i, true_return, est, nan, nan, kl, improvement)


# ------------------------------------------------------------------ train-expert


def train_expert(config: ExperimentConfig) -> RunResult:
    """TRPO on the true reward; writes run.csv, summary.csv and policy.vgnp."""
    env = make_env(config.env)
    with RunLock(config.output_dir):
        rng = np.random.default_rng(config.seed)
        policy, value_fn = make_policy(env, rng), ValueMlp(env.spec.obs_dim, rng)
        opt = Adam(value_fn.parameters(), lr=config.trpo.value_learning_rate)
        with _Run(config, env, 0) as run:
            for i in range(config.iterations):
                try:
                    trajs = collect(policy, env, config.rollout_steps, int(rng.integers(2**63)), config.workers)
                    batch = build_batch(trajs, env, value_fn, env.spec.gamma, config.trpo.gae_lambda, reward="true")
                    rep = trpo_step(policy, value_fn, batch, config.trpo, rng, opt)
                except ValueError as exc:
                    raise ValueError(f"iteration {i}: {exc}") from exc
                per_step = float(np.mean(np.concatenate([t.true_rewards for t in trajs])))
                report = _nan_report(i, float(np.mean([t.true_return for t in trajs])), per_step, rep.kl,
                                     rep.surrogate_improvement)
                if run.log(report, policy):
                    break
            save_params(run.out / "policy.vgnp", policy.state_dict())
            return run.finish(policy)


# ------------------------------------------------------------------ record-demos


def record_demos(config: ExperimentConfig) -> DemoSet:
    """Roll out the expert deterministically and save ``demos.vigd``.

    Frames modality renders through ``config.render`` (including any crop
    shake); ``export_frames`` also writes every frame as PPM.
    """
    env = make_env(config.env)
    rm = config.render
    if config.checkpoint is None:
        raise ConfigError("config field 'checkpoint' is required to record demos")
    if config.modality != "frames" and (rm.crop_shake_max > 0 or rm.mode != "injective"):
        raise ConfigError(f"render settings (mode {rm.mode}, crop_shake_max {rm.crop_shake_max}) "
                          f"only apply to frames demos, not {config.modality}")
    if config.export_frames and config.modality != "frames":
        raise ConfigError("export_frames needs frames modality")
    expert = load_policy(env, config.checkpoint)
    with RunLock(config.output_dir):
        out = Path(config.output_dir)
        trajs = collect_episodes(expert, env, config.n_trajs, config.seed,
                                 rm if config.modality == "frames" else None, deterministic=True)
        demos = from_trajectories(config.env, trajs, config.modality)
        save_demos(demos, out / "demos.vigd")
        if config.export_frames:
            export_frames(demos, out / "frames")
    return demos


def export_frames(demos: DemoSet, directory) -> list[Path]:
    """One sub-directory of lexicographically ordered PPM files per trajectory."""
    dirs = []
    for j, tr in enumerate(demos.trajectories):
        d = Path(directory) / f"traj_{j:03d}"
        d.mkdir(parents=True, exist_ok=True)
        for t, frame in enumerate(tr.frames):
            write_ppm(d / f"frame_{t:05d}.ppm", frame)
        dirs.append(d)
    return dirs


# ------------------------------------------------------------------ ingest-frames


def ingest_frames(directory, env_id: str, rm: RenderMap, crop_rect=None) -> DemoSet:
    """Pack a directory of P6 PPM frames into a single frames trajectory."""
    paths = sorted(p for p in Path(directory).iterdir() if p.suffix.lower() == ".ppm")
    if len(paths) < 2:
        raise FrameIngestError(f"{directory}: need at least 2 PPM frames, found {len(paths)}")
    raw = [read_ppm(p) for p in paths]
    h, w = raw[0].shape[:2]
    for p, f in zip(paths, raw):
        if f.shape[:2] != (h, w):
            raise FrameIngestError(f"{p}: frame is {f.shape[1]}x{f.shape[0]}, expected {w}x{h} like {paths[0].name}")
    rect = tuple(crop_rect) if crop_rect is not None else (0, 0, w, h)
    frames = np.stack([resize_and_crop(f, rect, rm.width, rm.height) for f in raw])
    if rm.channels == 1:
        frames = np.stack([to_grey(f) for f in frames])
    return DemoSet(env_id, "frames", [DemoTrajectory(frames=frames)], rm.shape)


# ------------------------------------------------------------------ verify-injectivity

# states the renderers are specified over, gridded for exhaustive checks
STATE_BOXES = {
    "cartpole_analog": ([-2.4, -3.0, -math.pi, -4.0], [2.4, 3.0, math.pi, 4.0]),
    "pendulum_analog": ([-math.pi, -8.0], [math.pi, 8.0]),
    "point_mass": ([-1.0, -1.0], [1.0, 1.0]),
}
# angle coordinates, where the two ends of the box are the same state
PERIODIC_AXES = {"cartpole_analog": (2,), "pendulum_analog": (0,), "point_mass": ()}


def enumerate_states(env: Env, points_per_axis: int | None = None) -> np.ndarray:
    if isinstance(env, GridMdp):
        return np.eye(env.n_states)
    lo, hi = STATE_BOXES[env.spec.id]
    n = points_per_axis or (6 if isinstance(env, CartPoleAnalog) else 50)
    periodic = PERIODIC_AXES[env.spec.id]
    axes = [np.linspace(a, b, n, endpoint=i not in periodic) for i, (a, b) in enumerate(zip(lo, hi))]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(lo))


def verify_injectivity(env_id: str, rm: RenderMap, seed: int = 0, policy_pairs: int = 5,
                       points_per_axis: int | None = None) -> dict:
    """Exhaustive frame-collision check plus, on grid MDPs, the exact
    discriminator-equivalence check over random policy pairs."""
    env = make_env(env_id)
    states = enumerate_states(env, points_per_axis)
    rep = injectivity_check(env, rm, states)
    max_diff = None
    if isinstance(env, GridMdp):
        rng = np.random.default_rng(seed)
        n, k = env.n_states, env.spec.n_actions
        max_diff = max(equivalence_check(env, rng.dirichlet(np.ones(k), n), rng.dirichlet(np.ones(k), n),
                                         rm).max_abs_diff for _ in range(policy_pairs))
    return {"env": env_id, "render": rm.to_dict(), "n_states": rep.n_states,
            "n_distinct_frames": rep.n_distinct_frames, "injective": rep.injective, "max_abs_diff": max_diff,
            "collisions": [[_state_label(env, states[i]), _state_label(env, states[j])] for i, j in rep.collisions]}


def _state_label(env: Env, state: np.ndarray):
    return env.index(state) if isinstance(env, GridMdp) else state.tolist()


def injectivity_text(result: dict) -> str:
    r = result["render"]
    lines = [f"environment      {result['env']}",
             f"render map       {r['width']}x{r['height']}x{r['channels']} {r['mode']}",
             f"states checked   {result['n_states']}",
             f"distinct frames  {result['n_distinct_frames']}",
             f"injective        {'yes' if result['injective'] else 'no'}",
             f"collisions       {len(result['collisions'])}"]
    for a, b in result["collisions"][:10]:
        lines.append(f"  {a} ~ {b}")
    if len(result["collisions"]) > 10:
        lines.append(f"  ... {len(result['collisions']) - 10} more")
    if result["max_abs_diff"] is not None:
        lines.append(f"max |D_state - D_image|  {result['max_abs_diff']:.3e}")
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------------ imitate


def load_run_demos(config: ExperimentConfig) -> DemoSet:
    """Load the demos and check them against the method, before any compute."""
    if config.method == "expert_trpo":
        raise ConfigError("expert_trpo is not an imitation method; use train-expert")
    if config.demo_path is None:
        raise ConfigError("config field 'demo_path' is required for imitation")
    demos = load_demos(config.demo_path)
    if demos.env_id != config.env:
        raise ConfigError(f"demos were recorded on {demos.env_id}, but the config env is {config.env}")
    m = config.method
    if m in ("gail", "sigan", "vigan"):
        check_modality(m, demos, config.render)
    elif m == "bc" and demos.modality != "state_action":
        raise ValueError(f"bc needs state_action demos, got {demos.modality}")
    elif m in ("pixel", "tcn"):
        if demos.modality != "frames":
            raise ValueError(f"{m} needs frames demos, got {demos.modality}")
        if tuple(demos.frame_shape) != config.render.shape:
            raise ValueError(f"demo frames are {demos.frame_shape} but the render map produces {config.render.shape}")
    if config.demo_transform != "none":
        if demos.modality != "frames":
            raise ConfigError(f"demo_transform {config.demo_transform} needs frames demos")
        if config.demo_transform == "phase_shift":
            demos = phase_shift(demos)
        else:
            demos = shuffle_demos(demos, np.random.default_rng([config.seed, 1]))
    return demos


def imitate(config: ExperimentConfig) -> RunResult:
    """Run one imitation method for ``config.iterations`` iterations."""
    demos = load_run_demos(config)
    env = make_env(config.env)
    rm = config.render
    m = config.method
    with RunLock(config.output_dir):
        rng = np.random.default_rng(config.seed)
        policy, value_fn = make_policy(env, rng), ValueMlp(env.spec.obs_dim, rng)
        with _Run(config, env, len(demos.trajectories)) as run:
            if m == "bc":
                _run_bc(config, env, demos, policy, run)
            elif m in ("gail", "sigan", "vigan"):
                ac = config.adversarial_config()
                D = make_discriminator(m, env, rng, rm, config.k_frames, ac.reward_clamp_eps)
                opts = make_optimizers(D, value_fn, ac, config.trpo)
                for i in range(config.iterations):
                    rep = adversarial_iteration(policy, value_fn, D, env, rm, demos, ac, config.trpo, rng, opts, i)
                    if run.log(rep, policy):
                        break
                save_params(run.out / "discriminator.vgnp", D.state_dict())
            else:
                bc_cfg = config.baseline_config()
                encoder = None
                if m == "tcn":
                    encoder = _train_encoder(config, env, demos, policy, rng)
                    save_params(run.out / "encoder.vgnp", encoder.state_dict())
                opt = Adam(value_fn.parameters(), lr=config.trpo.value_learning_rate)
                for i in range(config.iterations):
                    rep = synced_iteration(policy, value_fn, env, rm, demos, m, bc_cfg, config.trpo, rng, opt,
                                           encoder, i)
                    if run.log(rep, policy):
                        break
            save_params(run.out / "policy.vgnp", policy.state_dict())
            return run.finish(policy)


def _run_bc(config, env, demos, policy, run) -> None:
    """Behavior cloning: one logged row per full-batch epoch."""
    lr = config.baseline_config().bc_learning_rate
    state = {"i": 0, "stop": False}

    class _Stop(Exception):
        pass

    def on_epoch(p, loss):
        rep = _nan_report(state["i"], float("nan"), -loss)  # mean log-likelihood of the expert actions
        state["i"] += 1
        if run.log(rep, p):
            raise _Stop

    try:
        bc_train(policy, demos, env, epochs=config.iterations, lr=lr, on_epoch=on_epoch)
    except _Stop:
        pass


def _train_encoder(config, env, demos, policy, rng):
    bc = config.baseline_config()
    rm = config.render
    frame_trajs = [tr.frames for tr in demos.trajectories]
    if bc.tcn_include_agent_frames:
        frame_trajs += [t.frames for t in collect(policy, env, config.rollout_steps, int(rng.integers(2**63)),
                                                   config.workers, rm)]
    encoder = TcnEncoder(rm.channels, rm.height, rm.width, rng, embed_dim=bc.tcn_embed_dim)
    sampler = TripletSampler(bc.tcn_pos_window, bc.tcn_neg_margin, bc.tcn_margin)
    tcn_train(encoder, frame_trajs, sampler, bc.tcn_epochs, rng, bc.tcn_batch_size, bc.tcn_learning_rate)
    return encoder


# ------------------------------------------------------------------ eval


def eval_checkpoint(config: ExperimentConfig) -> dict:
    """Deterministic evaluation of a saved policy; writes summary.csv."""
    if config.checkpoint is None:
        raise ConfigError("config field 'checkpoint' is required for eval")
    env = make_env(config.env)
    policy = load_policy(env, config.checkpoint)
    with RunLock(config.output_dir):
        mean, std = evaluate(policy, env, config.eval_episodes, config.seed)
        summary = {"run": Path(config.output_dir).name, "env": config.env, "method": config.method, "n_traj": 0,
                   "seed": config.seed, "iterations": 0, "eval_episodes": config.eval_episodes,
                   "mean_return": mean, "std_return": std}
        (Path(config.output_dir) / "summary.csv").write_text(csv_text(SUMMARY_FIELDS, [summary]))
    return summary
