"""Finite MDPs with an explicit transition tensor."""

from __future__ import annotations

import numpy as np

from .base import Env, EnvSpec

ROW_TOL = 1e-12


class GridMdp(Env):
    """Tabular MDP laid out on a rows x cols grid for rendering.

    States are exposed to policies as one-hot vectors; ``index`` recovers
    the integer state.
    """

    def __init__(self, P, r, p0, gamma: float = 0.9, layout=None, horizon: int = 50):
        P = np.asarray(P, dtype=np.float64)
        self.P = P
        self.r = np.asarray(r, dtype=np.float64)
        self.p0 = np.asarray(p0, dtype=np.float64)
        self.n_states, self.n_actions = P.shape[:2]
        if P.shape != (self.n_states, self.n_actions, self.n_states):
            raise ValueError(f"transition tensor must be (S, A, S), got {P.shape}")
        if self.r.shape != (self.n_states, self.n_actions):
            raise ValueError(f"reward table must be (S, A), got {self.r.shape}")
        if np.any(P < 0) or np.max(np.abs(P.sum(axis=2) - 1.0)) > ROW_TOL:
            raise ValueError("every P[s][a] must be a probability vector")
        if np.any(self.p0 < 0) or abs(self.p0.sum() - 1.0) > ROW_TOL:
            raise ValueError("p0 must be a probability vector")
        self.gamma = gamma
        self.layout = tuple(layout) if layout is not None else (1, self.n_states)
        if self.layout[0] * self.layout[1] < self.n_states:
            raise ValueError(f"layout {self.layout} too small for {self.n_states} states")
        self.spec = EnvSpec("grid_mdp", state_dim=self.n_states, obs_dim=self.n_states,
                            horizon=horizon, gamma=gamma, n_actions=self.n_actions,
                            init={"p0": self.p0.tolist()})

    def onehot(self, s: int) -> np.ndarray:
        v = np.zeros(self.n_states)
        v[s] = 1.0
        return v

    @staticmethod
    def index(state) -> int:
        return int(np.argmax(state))

    def reset(self, rng):
        return self.onehot(_draw(self.p0, rng))

    def step(self, state, action, rng=None):
        state, action = self._check(state, action)
        s, a = self.index(state), int(action[0])
        row = self.P[s, a]
        nxt = int(np.argmax(row)) if row.max() == 1.0 else _draw(row, rng)
        return self.onehot(nxt), float(self.r[s, a]), False


def _draw(p: np.ndarray, rng: np.random.Generator) -> int:
    if rng is None:
        raise ValueError("stochastic transition needs an rng")
    cdf = np.cumsum(p)
    return min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), len(p) - 1)


def two_state_cycle(gamma: float = 0.5, p0=(1.0, 0.0), horizon: int = 20) -> GridMdp:
    """Action 0 switches state, action 1 stays; reward 1 for staying in state 1."""
    P = np.zeros((2, 2, 2))
    P[0, 0, 1] = P[1, 0, 0] = 1.0
    P[0, 1, 0] = P[1, 1, 1] = 1.0
    r = np.array([[0.0, 0.0], [0.0, 1.0]])
    return GridMdp(P, r, p0, gamma, layout=(1, 2), horizon=horizon)


def chain(n: int = 4, gamma: float = 0.9, slip: float = 0.1, horizon: int = 30) -> GridMdp:
    """Left/right chain with slip; reward for acting in the right-most state."""
    P = np.zeros((n, 2, n))
    for s in range(n):
        left, right = max(s - 1, 0), min(s + 1, n - 1)
        P[s, 0, left] += 1 - slip
        P[s, 0, right] += slip
        P[s, 1, right] += 1 - slip
        P[s, 1, left] += slip
    r = np.zeros((n, 2))
    r[n - 1, :] = 1.0
    p0 = np.zeros(n)
    p0[0] = 1.0
    return GridMdp(P, r, p0, gamma, layout=(1, n), horizon=horizon)


def gridworld(rows: int = 5, cols: int = 5, gamma: float = 0.9, slip: float = 0.1,
              horizon: int = 50) -> GridMdp:
    """Four-move grid world; a move slips to a uniformly random move with prob ``slip``."""
    n = rows * cols
    moves = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    P = np.zeros((n, 4, n))
    for s in range(n):
        r0, c0 = divmod(s, cols)
        for a in range(4):
            for b, (dr, dc) in enumerate(moves):
                p = (1 - slip if a == b else 0.0) + slip / 4
                rr, cc = min(max(r0 + dr, 0), rows - 1), min(max(c0 + dc, 0), cols - 1)
                P[s, a, rr * cols + cc] += p
    r = np.zeros((n, 4))
    r[n - 1, :] = 1.0
    p0 = np.full(n, 1.0 / n)
    return GridMdp(P, r, p0, gamma, layout=(rows, cols), horizon=horizon)


def random_mdp(n_states: int, n_actions: int, rng: np.random.Generator, gamma: float = 0.9,
               layout=None) -> GridMdp:
    P = rng.dirichlet(np.full(n_states, 0.5), size=(n_states, n_actions))
    P /= P.sum(axis=2, keepdims=True)
    r = rng.normal(size=(n_states, n_actions))
    p0 = rng.dirichlet(np.ones(n_states))
    p0 /= p0.sum()
    return GridMdp(P, r, p0, gamma, layout=layout)
