"""GAN-style reward estimators: GAIL on (s, a), SIGAN on (s, s'), VIGAN on
k consecutive frames.

The discriminator outputs P(expert | input); agent rewards are
``-ln(1 - D)``, so samples the discriminator mistakes for expert ones earn
the most.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import diffcore as dc
from .demos import DemoSet
from .diffcore import Adam, Tensor
from .envs import Env, RenderMap
from .models import DISC_EPS, ConvDiscriminator, MlpDiscriminator, stack_frames
from .rollout import Trajectory, build_batch, collect
from .trpo import TrpoConfig, TrpoReport, trpo_step

METHODS = ("gail", "sigan", "vigan")
DEMO_MODALITIES = {"gail": ("state_action",), "sigan": ("state_action", "state_only"), "vigan": ("frames",)}
CSV_FIELDS = ("iter", "mean_true_return", "mean_est_reward", "disc_loss", "disc_accuracy", "kl",
              "surrogate_improvement")


@dataclass
class AdversarialConfig:
    method: str = "vigan"
    k_frames: int = 2
    disc_steps_per_iter: int = 1
    disc_batch_size: int = 64
    disc_learning_rate: float = 1e-4
    reward_clamp_eps: float = DISC_EPS
    rollout_steps: int = 2000
    workers: int = 1

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.k_frames not in (2, 3):
            raise ValueError("k_frames must be 2 or 3")
        if self.disc_steps_per_iter < 1:
            raise ValueError("disc_steps_per_iter must be >= 1")
        if not 0.0 < self.reward_clamp_eps < 0.1:
            raise ValueError("reward_clamp_eps must lie in (0, 0.1)")
        if self.disc_batch_size < 1 or self.rollout_steps < 1:
            raise ValueError("disc_batch_size and rollout_steps must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def check_demo_modality(method: str, demos: DemoSet) -> None:
    if demos.modality not in DEMO_MODALITIES[method]:
        raise ValueError(f"{method} needs {' or '.join(DEMO_MODALITIES[method])} demos, got {demos.modality}")


def check_modality(method: str, demos: DemoSet, render_map: RenderMap | None = None) -> None:
    """Demo modality and, for vigan, render-map geometry must match the method."""
    check_demo_modality(method, demos)
    if method == "vigan":
        if render_map is None:
            raise ValueError("vigan needs a render map for agent frames")
        if tuple(demos.frame_shape) != render_map.shape:
            raise ValueError(f"demo frames are {demos.frame_shape} but the render map produces {render_map.shape}")


# ------------------------------------------------------------------ inputs


def _action_features(env: Env, actions: np.ndarray) -> np.ndarray:
    if env.spec.discrete:
        return np.eye(env.spec.n_actions)[actions[:, 0].astype(np.int64)]
    return actions


def window_count(length: int, method: str, k: int) -> int:
    """Valid discriminator positions in a sequence of ``length`` transitions."""
    return max(length + 2 - k, 0) if method == "vigan" else length


def _gather(env: Env, method: str, k: int, pool, picks) -> np.ndarray:
    """Build discriminator inputs for (trajectory index, position) picks."""
    if method == "vigan":
        tuples = np.stack([pool[i].frames[t:t + k] for i, t in picks])
        return stack_frames(tuples)
    rows = []
    for i, t in picks:
        tr = pool[i]
        s = env.observe(tr.states[t])
        if method == "gail":
            rows.append(np.concatenate([s, _action_features(env, tr.actions[t:t + 1])[0]]))
        else:
            rows.append(np.concatenate([s, env.observe(tr.states[t + 1])]))
    return np.array(rows)


def sample_positions(lengths, method: str, k: int, n: int, rng: np.random.Generator):
    """``n`` (trajectory, position) pairs uniform over all valid positions."""
    counts = np.array([window_count(L, method, k) for L in lengths])
    total = int(counts.sum())
    if total == 0:
        raise ValueError("no valid discriminator positions in the pool")
    flat = rng.integers(total, size=n)
    edges = np.cumsum(counts)
    traj = np.searchsorted(edges, flat, side="right")
    pos = flat - (edges[traj] - counts[traj])
    return list(zip(traj.tolist(), pos.tolist()))


def make_disc_batch(agent_trajs, demo_set: DemoSet, batch_size: int, rng: np.random.Generator, env: Env,
                    method: str, k_frames: int = 2):
    """Equal-size agent and expert batches, each uniform over valid positions."""
    check_demo_modality(method, demo_set)
    if not agent_trajs or not demo_set.trajectories:
        raise ValueError("both pools must be nonempty")
    if method == "vigan" and any(tr.frames is None for tr in agent_trajs):
        raise ValueError("vigan needs rendered agent trajectories")
    k = k_frames
    a_pos = sample_positions([len(t) for t in agent_trajs], method, k, batch_size, rng)
    e_pos = sample_positions([len(t) for t in demo_set.trajectories], method, k, batch_size, rng)
    return (_gather(env, method, k, agent_trajs, a_pos), _gather(env, method, k, demo_set.trajectories, e_pos))


def reward_inputs(env: Env, method: str, k: int, tr: Trajectory) -> np.ndarray:
    """Discriminator input for every step of an agent trajectory.

    Step t is scored on the window ending at frame t+1; for k = 3 the first
    step repeats frame 0 to fill the window.
    """
    T = len(tr)
    if method == "vigan":
        idx = np.arange(T)[:, None] + np.arange(2 - k, 2)[None, :]
        return stack_frames(tr.frames[np.maximum(idx, 0)])
    s = env.observe(tr.states)
    if method == "gail":
        return np.concatenate([s[:-1], _action_features(env, tr.actions)], axis=1)
    return np.concatenate([s[:-1], s[1:]], axis=1)


# ------------------------------------------------------------------ losses and rewards


def make_discriminator(method: str, env: Env, rng: np.random.Generator, render_map: RenderMap | None = None,
                       k_frames: int = 2, eps: float = DISC_EPS):
    if method == "vigan":
        if render_map is None:
            raise ValueError("vigan needs a render map")
        return ConvDiscriminator(k_frames, render_map.channels, render_map.height, render_map.width, rng, eps=eps)
    obs = env.spec.obs_dim
    extra = (env.spec.n_actions if env.spec.discrete else env.spec.action_dim) if method == "gail" else obs
    return MlpDiscriminator(obs + extra, rng, eps=eps)


def disc_loss(D, agent_inputs, expert_inputs) -> Tensor:
    """-mean ln D(expert) - mean ln(1 - D(agent))."""
    d_e = D.forward(expert_inputs)
    d_a = D.forward(agent_inputs)
    return dc.neg(dc.add(dc.mean(dc.log(d_e)), dc.mean(dc.log(dc.sub(1.0, d_a)))))


def disc_accuracy(D, agent_inputs, expert_inputs) -> float:
    with dc.no_grad():
        d_e = D.forward(expert_inputs).data
        d_a = D.forward(agent_inputs).data
    return float(0.5 * (np.mean(d_e > 0.5) + np.mean(d_a < 0.5)))


def reward_from_disc(D, inputs, eps: float = DISC_EPS) -> np.ndarray:
    """-ln(1 - clamp(D, eps, 1 - eps)) per input row."""
    with dc.no_grad():
        d = D.forward(inputs).data
    return -np.log(1.0 - np.clip(d, eps, 1.0 - eps))


def reward_from_prob(d, eps: float = DISC_EPS):
    return -np.log(1.0 - np.clip(np.asarray(d, dtype=np.float64), eps, 1.0 - eps))


def label_rewards(D, env: Env, method: str, k: int, trajs, eps: float = DISC_EPS, chunk: int = 512) -> None:
    for tr in trajs:
        x = reward_inputs(env, method, k, tr)
        tr.est_rewards = np.concatenate([reward_from_disc(D, x[i:i + chunk], eps) for i in range(0, len(x), chunk)])


# ------------------------------------------------------------------ the loop


@dataclass
class IterationReport:
    iter: int
    mean_true_return: float
    mean_est_reward: float
    disc_loss: float
    disc_accuracy: float
    kl: float
    surrogate_improvement: float
    trpo: TrpoReport = field(default_factory=TrpoReport, repr=False)

    def row(self) -> dict:
        return {k: getattr(self, k) for k in CSV_FIELDS}


@dataclass
class Optimizers:
    disc: Adam
    value: Adam


def make_optimizers(D, value_fn, config: AdversarialConfig, trpo_config: TrpoConfig) -> Optimizers:
    return Optimizers(Adam(D.parameters(), lr=config.disc_learning_rate),
                      Adam(value_fn.parameters(), lr=trpo_config.value_learning_rate))


def adversarial_iteration(policy, value_fn, D, env: Env, render_map: RenderMap | None, demo_set: DemoSet,
                          config: AdversarialConfig, trpo_config: TrpoConfig, rng: np.random.Generator,
                          optimizers: Optimizers | None = None, index: int = 0, train_disc: bool = True
                          ) -> IterationReport:
    """Rollouts, discriminator steps, reward labelling, then a TRPO update."""
    method = config.method
    check_modality(method, demo_set, render_map)
    opts = optimizers or make_optimizers(D, value_fn, config, trpo_config)
    try:
        trajs = collect(policy, env, config.rollout_steps, int(rng.integers(2**63)), config.workers,
                        render_map if method == "vigan" else None)
        losses, accs = [], []
        for _ in range(config.disc_steps_per_iter):
            a_in, e_in = make_disc_batch(trajs, demo_set, config.disc_batch_size, rng, env, method, config.k_frames)
            if train_disc:
                loss = disc_loss(D, a_in, e_in)
                dc.backward(loss)
                opts.disc.step()
                losses.append(loss.item())
            else:
                with dc.no_grad():
                    losses.append(disc_loss(D, a_in, e_in).item())
            accs.append(disc_accuracy(D, a_in, e_in))
        label_rewards(D, env, method, config.k_frames, trajs, config.reward_clamp_eps)
        batch = build_batch(trajs, env, value_fn, env.spec.gamma, trpo_config.gae_lambda, reward="est")
        rep = trpo_step(policy, value_fn, batch, trpo_config, rng, opts.value)
    except ValueError as exc:
        raise ValueError(f"iteration {index}: {exc}") from exc
    return IterationReport(index, float(np.mean([t.true_return for t in trajs])),
                           float(np.mean(np.concatenate([t.est_rewards for t in trajs]))),
                           float(np.mean(losses)), float(np.mean(accs)), rep.kl, rep.surrogate_improvement, rep)
