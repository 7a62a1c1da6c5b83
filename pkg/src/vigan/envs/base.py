from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class EnvSpec:
    id: str
    state_dim: int
    obs_dim: int
    horizon: int
    gamma: float = 0.99
    n_actions: int | None = None  # discrete action count, None for a continuous box
    action_low: tuple[float, ...] = ()
    action_high: tuple[float, ...] = ()
    init: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if self.n_actions is None:
            if len(self.action_low) != len(self.action_high) or not self.action_low:
                raise ValueError("continuous action space needs matching low/high bounds")
            if not (np.all(np.isfinite(self.action_low)) and np.all(np.isfinite(self.action_high))):
                raise ValueError("action bounds must be finite")

    @property
    def discrete(self) -> bool:
        return self.n_actions is not None

    @property
    def action_dim(self) -> int:
        return 1 if self.discrete else len(self.action_low)


class Env:
    """Value-like environment: all episode state lives in the state vector.

    ``step`` reports termination only; the horizon is enforced by the caller
    (see :func:`vigan.rollout.collect`).
    """

    spec: EnvSpec

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def step(self, state: np.ndarray, action, rng: np.random.Generator | None = None):
        raise NotImplementedError

    def observe(self, states: np.ndarray) -> np.ndarray:
        """Policy/discriminator features for one state or a batch of states."""
        return np.asarray(states, dtype=np.float64)

    def _check(self, state, action) -> tuple[np.ndarray, np.ndarray]:
        state = np.asarray(state, dtype=np.float64)
        action = np.asarray(action, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(state)):
            raise ValueError(f"{self.spec.id}: non-finite state {state}")
        if not np.all(np.isfinite(action)):
            raise ValueError(f"{self.spec.id}: non-finite action {action}")
        if self.spec.discrete:
            a = int(action[0])
            if action.size != 1 or a != action[0] or not 0 <= a < self.spec.n_actions:
                raise ValueError(f"{self.spec.id}: action {action} outside Discrete({self.spec.n_actions})")
        else:
            action = np.clip(action, self.spec.action_low, self.spec.action_high)
        return state, action
