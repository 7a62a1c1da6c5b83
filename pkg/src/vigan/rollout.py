"""Trajectory collection, generalized advantage estimation, and batching.

Episodes are always collected whole, so a frame window never spans two
episodes. Episode ``i`` of a call with seed ``seed`` draws every random
number from its own stream ``SeedSequence([seed, i])``; the worker count
only decides how many episodes run at once and never changes the output.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .envs import Env, RenderMap, render_observed


@dataclass
class Trajectory:
    states: np.ndarray  # (T+1, state_dim)
    actions: np.ndarray  # (T, action_dim)
    log_probs: np.ndarray  # (T,)
    true_rewards: np.ndarray  # (T,)
    terminated: bool = False
    frames: np.ndarray | None = None  # (T+1, H, W, C) uint8
    est_rewards: np.ndarray = field(default=None)  # (T,), filled in by a reward estimator

    def __post_init__(self):
        T = len(self.actions)
        if self.est_rewards is None:
            self.est_rewards = np.zeros(T)
        if len(self.states) != T + 1 or len(self.log_probs) != T or len(self.true_rewards) != T \
                or len(self.est_rewards) != T:
            raise ValueError("trajectory arrays have inconsistent lengths")
        if self.frames is not None and len(self.frames) != T + 1:
            raise ValueError(f"expected {T + 1} frames, got {len(self.frames)}")

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def true_return(self) -> float:
        return float(np.sum(self.true_rewards))


def _policy_fn(policy):
    return policy.act if hasattr(policy, "act") else policy


def episode_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def run_episode(policy, env: Env, rng: np.random.Generator, render_map: RenderMap | None = None,
                deterministic: bool = False) -> Trajectory:
    """One whole episode, up to the environment horizon."""
    act = _policy_fn(policy)
    s = env.reset(rng)
    states, actions, log_probs, rewards = [s], [], [], []
    terminated = False
    for t in range(env.spec.horizon):
        a, lp = act(env.observe(s), rng, deterministic)
        try:
            s, r, terminated = env.step(s, a, rng)
        except ValueError as exc:
            raise ValueError(f"step {t} of episode: {exc}") from exc
        states.append(s)
        actions.append(np.asarray(a, dtype=np.float64).reshape(-1))
        log_probs.append(lp)
        rewards.append(r)
        if terminated:
            break
    states = np.array(states)
    frames = render_observed(env, states, render_map, rng) if render_map is not None else None
    return Trajectory(states, np.array(actions).reshape(len(actions), -1), np.array(log_probs, dtype=np.float64),
                      np.array(rewards, dtype=np.float64), terminated, frames)


def collect(policy, env: Env, n_steps: int, seed: int, workers: int = 1, render_map: RenderMap | None = None,
            deterministic: bool = False) -> list[Trajectory]:
    """Whole episodes until at least ``n_steps`` environment steps are gathered.

    The result is the shortest prefix of the episode sequence reaching
    ``n_steps``, identical for any ``workers``.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if workers < 1:
        raise ValueError("workers must be >= 1")
    trajs: list[Trajectory] = []
    total, next_index = 0, 0

    def job(i):
        try:
            return run_episode(policy, env, episode_rng(seed, i), render_map, deterministic)
        except ValueError as exc:
            raise ValueError(f"episode {i} (seed {seed}): {exc}") from exc

    with ThreadPoolExecutor(max_workers=workers) if workers > 1 else _Serial() as pool:
        while total < n_steps:
            wave = list(pool.map(job, range(next_index, next_index + workers)))
            next_index += workers
            for tr in wave:
                if total >= n_steps:
                    break
                trajs.append(tr)
                total += len(tr)
    return trajs


def collect_episodes(policy, env: Env, n_episodes: int, seed: int, render_map: RenderMap | None = None,
                     deterministic: bool = False) -> list[Trajectory]:
    return [run_episode(policy, env, episode_rng(seed, i), render_map, deterministic) for i in range(n_episodes)]


class _Serial:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False

    @staticmethod
    def map(fn, items):
        return map(fn, items)


def gae(rewards, values, gamma: float, lam: float, terminated: bool = False):
    """Advantages and value targets for one episode.

    ``values`` has one entry per state (T+1); the last entry is the
    bootstrap value and is replaced by 0 when the episode terminated.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64).copy()
    if values.shape != (len(rewards) + 1,):
        raise ValueError(f"values must have length T+1 = {len(rewards) + 1}, got {values.shape}")
    if not (np.all(np.isfinite(rewards)) and np.all(np.isfinite(values))):
        raise ValueError("non-finite reward or value in advantage estimation")
    if terminated:
        values[-1] = 0.0
    deltas = rewards + gamma * values[1:] - values[:-1]
    adv = np.zeros_like(rewards)
    running = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        running = deltas[t] + gamma * lam * running
        adv[t] = running
    return adv, adv + values[:-1]


@dataclass
class AdvantageBatch:
    obs: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    advantages: np.ndarray
    value_targets: np.ndarray

    def __len__(self) -> int:
        return len(self.obs)


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    if len(adv) < 2:
        return adv.copy()
    centred = adv - adv.mean()
    std = centred.std()
    return centred / std if std > 1e-12 else centred


def build_batch(trajs: list[Trajectory], env: Env, value_fn, gamma: float, lam: float,
                reward: str = "est") -> AdvantageBatch:
    """Flatten trajectories into a TRPO batch using estimated or true rewards."""
    if reward not in ("est", "true"):
        raise ValueError("reward must be 'est' or 'true'")
    obs, acts, lps, advs, targets = [], [], [], [], []
    for tr in trajs:
        o = env.observe(tr.states)
        v = value_fn.predict(o)
        r = tr.est_rewards if reward == "est" else tr.true_rewards
        a, t = gae(r, v, gamma, lam, tr.terminated)
        obs.append(o[:-1])
        acts.append(tr.actions)
        lps.append(tr.log_probs)
        advs.append(a)
        targets.append(t)
    adv = np.concatenate(advs)
    return AdvantageBatch(np.concatenate(obs), np.concatenate(acts), np.concatenate(lps),
                          normalize_advantages(adv), np.concatenate(targets))
