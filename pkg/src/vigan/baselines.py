"""Comparison methods: time-synchronized pixel and TCN-embedding rewards, and
behavior cloning.

The two reward baselines compare the agent's frame at step t with the
expert's frame at step t of a demo chosen per episode, so they only work
when the demos are aligned in time with the agent.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import diffcore as dc
from .adversarial import IterationReport
from .demos import DemoSet
from .diffcore import SGD, Adam
from .envs import Env, RenderMap
from .models import TcnEncoder, normalize_frames
from .rollout import build_batch, collect
from .trpo import TrpoConfig, trpo_step


@dataclass
class BaselineConfig:
    rollout_steps: int = 2000
    workers: int = 1
    tcn_pos_window: int = 2
    tcn_neg_margin: int = 10
    tcn_margin: float = 0.2
    tcn_epochs: int = 200
    tcn_batch_size: int = 32
    tcn_learning_rate: float = 1e-3
    tcn_embed_dim: int = 16
    tcn_include_agent_frames: bool = False
    bc_learning_rate: float = 1e-3

    def to_dict(self) -> dict:
        return asdict(self)


# ------------------------------------------------------------------ pixel reward


def pixel_reward(expert_frame: np.ndarray, agent_frame: np.ndarray) -> float:
    """exp(-2 ||e - a||^2) over frames normalised to [-1, 1]."""
    if expert_frame.shape != agent_frame.shape:
        raise ValueError(f"frame geometry differs: {expert_frame.shape} vs {agent_frame.shape}")
    e = normalize_frames(expert_frame) if expert_frame.dtype == np.uint8 else np.asarray(expert_frame, float)
    a = normalize_frames(agent_frame) if agent_frame.dtype == np.uint8 else np.asarray(agent_frame, float)
    d = e - a
    return float(np.exp(-2.0 * np.sum(d * d)))


def pixel_rewards(expert_frames: np.ndarray, agent_frames: np.ndarray) -> np.ndarray:
    """Batched pixel_reward over aligned frame sequences."""
    d = normalize_frames(expert_frames) - normalize_frames(agent_frames)
    return np.exp(-2.0 * np.sum(d.reshape(len(d), -1) ** 2, axis=1))


def synced_frames(expert_frames: np.ndarray, n: int) -> np.ndarray:
    """Expert frames for agent steps 1..n, holding the last frame past the end."""
    idx = np.minimum(np.arange(1, n + 1), len(expert_frames) - 1)
    return expert_frames[idx]


# ------------------------------------------------------------------ TCN


@dataclass(frozen=True)
class TripletSampler:
    pos_window: int = 2
    neg_margin: int = 10
    margin: float = 0.2

    def __post_init__(self):
        if not self.neg_margin > self.pos_window >= 1:
            raise ValueError("need neg_margin > pos_window >= 1")
        if not self.margin > 0:
            raise ValueError("margin must be > 0")

    def sample(self, lengths, n: int, rng: np.random.Generator):
        """(trajectory, anchor, positive, negative) index rows."""
        lengths = np.asarray(lengths)
        ok = np.flatnonzero(lengths > self.neg_margin + 1)
        if len(ok) == 0:
            raise ValueError(f"every trajectory is too short for negatives beyond {self.neg_margin} frames")
        counts = lengths[ok]
        pick = ok[np.searchsorted(np.cumsum(counts), rng.integers(counts.sum(), size=n), side="right")]
        rows = []
        for j in pick:
            L = int(lengths[j])
            while True:
                a = int(rng.integers(L))
                far = [t for t in (range(0, a - self.neg_margin), range(a + self.neg_margin + 1, L)) if len(t)]
                if far:
                    break
            lo, hi = max(0, a - self.pos_window), min(L - 1, a + self.pos_window)
            p = a
            while p == a:
                p = int(rng.integers(lo, hi + 1))
            negs = np.concatenate([np.asarray(r) for r in far])
            rows.append((int(j), a, p, int(negs[rng.integers(len(negs))])))
        return rows


def triplet_loss(x_a, x_p, x_n, margin: float):
    """Mean of max(0, ||a-p||^2 - ||a-n||^2 + margin); works on arrays or tensors."""
    if isinstance(x_a, np.ndarray):
        dp = np.sum((x_a - x_p) ** 2, axis=1)
        dn = np.sum((x_a - x_n) ** 2, axis=1)
        return float(np.mean(np.maximum(0.0, dp - dn + margin)))
    dp = dc.sum(dc.mul(dc.sub(x_a, x_p), dc.sub(x_a, x_p)), axis=1)
    dn = dc.sum(dc.mul(dc.sub(x_a, x_n), dc.sub(x_a, x_n)), axis=1)
    return dc.mean(dc.relu(dc.add(dc.sub(dp, dn), margin)))


def tcn_train(encoder: TcnEncoder, frame_trajs, sampler: TripletSampler, epochs: int, rng: np.random.Generator,
              batch_size: int = 32, lr: float = 1e-3) -> float:
    """Fit the encoder with the triplet loss; returns the final mean loss."""
    frame_trajs = [np.asarray(f) for f in frame_trajs]
    lengths = [len(f) for f in frame_trajs]
    opt = Adam(encoder.parameters(), lr=lr)
    loss = float("nan")
    for _ in range(epochs):
        rows = sampler.sample(lengths, batch_size, rng)
        a = np.stack([frame_trajs[j][i] for j, i, _, _ in rows])
        p = np.stack([frame_trajs[j][i] for j, _, i, _ in rows])
        n = np.stack([frame_trajs[j][i] for j, _, _, i in rows])
        x_a, x_p, x_n = encoder.forward(a), encoder.forward(p), encoder.forward(n)
        out = triplet_loss(x_a, x_p, x_n, sampler.margin)
        dc.backward(out)
        opt.step()
        loss = out.item()
    rows = sampler.sample(lengths, 256, rng)
    emb = [encoder.embed(np.stack([frame_trajs[r[0]][r[k]] for r in rows])) for k in (1, 2, 3)]
    return triplet_loss(*emb, sampler.margin) if epochs > 0 else loss


def tcn_reward(encoder: TcnEncoder, expert_frame: np.ndarray, agent_frame: np.ndarray) -> float:
    e = encoder.embed(expert_frame[None])[0]
    a = encoder.embed(agent_frame[None])[0]
    return float(np.exp(-2.0 * np.sum((e - a) ** 2)))


def tcn_rewards(encoder: TcnEncoder, expert_frames: np.ndarray, agent_frames: np.ndarray) -> np.ndarray:
    e = encoder.embed(expert_frames)
    a = encoder.embed(agent_frames)
    return np.exp(-2.0 * np.sum((e - a) ** 2, axis=1))


# ------------------------------------------------------------------ behavior cloning


def bc_train(policy, demo_set: DemoSet, env: Env, epochs: int = 500, lr: float = 1e-3,
             optimizer: str = "adam", on_epoch=None) -> list[float]:
    """Full-batch descent on mean negative log-likelihood; returns the loss curve.

    ``optimizer`` is ``"adam"`` or ``"sgd"``; ``on_epoch(policy, loss)`` runs
    after every update when given.
    """
    if demo_set.modality != "state_action":
        raise ValueError(f"behavior cloning needs state_action demos, got {demo_set.modality}")
    obs = np.concatenate([env.observe(tr.states[:-1]) for tr in demo_set.trajectories])
    acts = np.concatenate([tr.actions for tr in demo_set.trajectories])
    if optimizer not in ("adam", "sgd"):
        raise ValueError(f"optimizer must be 'adam' or 'sgd', got {optimizer!r}")
    opt = Adam(policy.parameters(), lr=lr) if optimizer == "adam" else SGD(policy.parameters(), lr=lr)
    curve = []
    for _ in range(epochs):
        nll = dc.neg(dc.mean(policy.log_prob_tensor(obs, acts)))
        dc.backward(nll)
        opt.step()
        curve.append(nll.item())
        if on_epoch is not None:
            on_epoch(policy, curve[-1])
    return curve


# ------------------------------------------------------------------ synced imitation loop


def synced_iteration(policy, value_fn, env: Env, render_map: RenderMap, demo_set: DemoSet, method: str,
                     config: BaselineConfig, trpo_config: TrpoConfig, rng: np.random.Generator,
                     value_optimizer: Adam, encoder: TcnEncoder | None = None, index: int = 0) -> IterationReport:
    """One TRPO iteration on the pixel or TCN reward against per-episode demos."""
    if demo_set.modality != "frames":
        raise ValueError(f"{method} needs frames demos, got {demo_set.modality}")
    if method == "tcn" and encoder is None:
        raise ValueError("tcn needs a trained encoder")
    try:
        trajs = collect(policy, env, config.rollout_steps, int(rng.integers(2**63)), config.workers, render_map)
        for tr in trajs:
            demo = demo_set.trajectories[int(rng.integers(len(demo_set.trajectories)))].frames
            ref = synced_frames(demo, len(tr))
            if method == "pixel":
                tr.est_rewards = pixel_rewards(ref, tr.frames[1:])
            else:
                tr.est_rewards = tcn_rewards(encoder, ref, tr.frames[1:])
        batch = build_batch(trajs, env, value_fn, env.spec.gamma, trpo_config.gae_lambda, reward="est")
        rep = trpo_step(policy, value_fn, batch, trpo_config, rng, value_optimizer)
    except ValueError as exc:
        raise ValueError(f"iteration {index}: {exc}") from exc
    nan = float("nan")
    return IterationReport(index, float(np.mean([t.true_return for t in trajs])),
                           float(np.mean(np.concatenate([t.est_rewards for t in trajs]))), nan, nan,
                           rep.kl, rep.surrogate_improvement, rep)
