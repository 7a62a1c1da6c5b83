"""Exact tabular checks: occupancy measures, JS divergence, Bayes-optimal
discriminators and the state/image discriminator equivalence.

Everything here is a pure function of finite tables, so results are exact up
to floating-point summation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .envs import GridMdp, RenderMap, render
from .envs.base import Env

FNV_OFFSET = np.uint64(0xCBF29CE484222325)
FNV_PRIME = np.uint64(0x100000001B3)


@dataclass
class OccupancyTable:
    """Unnormalised discounted visitation; every table sums to 1/(1-gamma)."""

    sa: np.ndarray  # (S, A)
    ss: np.ndarray  # (S, S)
    v: np.ndarray  # (S,)
    gamma: float

    @property
    def mass(self) -> float:
        return 1.0 / (1.0 - self.gamma)


def _check_policy(pi: np.ndarray, mdp: GridMdp) -> np.ndarray:
    pi = np.asarray(pi, dtype=np.float64)
    if pi.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError(f"policy table must be {(mdp.n_states, mdp.n_actions)}, got {pi.shape}")
    if np.any(pi < 0) or np.max(np.abs(pi.sum(axis=1) - 1.0)) > 1e-12:
        raise ValueError("policy rows must be probability vectors")
    return pi


def occupancy(mdp: GridMdp, pi) -> OccupancyTable:
    """Solve v = p0 + gamma * P_pi^T v directly."""
    pi = _check_policy(pi, mdp)
    P_pi = np.einsum("sa,sat->st", pi, mdp.P)
    v = np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * P_pi.T, mdp.p0)
    sa = pi * v[:, None]
    ss = np.einsum("sa,sat->st", sa, mdp.P)
    return OccupancyTable(sa, ss, v, mdp.gamma)


def js_divergence(p, q) -> float:
    """Jensen-Shannon divergence (natural log) between two non-negative tables.

    Tables are normalised to probability distributions first, so raw
    occupancy tables may be passed directly.
    """
    p = np.asarray(p, dtype=np.float64).ravel()
    q = np.asarray(q, dtype=np.float64).ravel()
    if p.shape != q.shape:
        raise ValueError(f"tables differ in size: {p.shape} vs {q.shape}")
    if np.any(p < 0) or np.any(q < 0):
        raise ValueError("occupancy tables must be non-negative")
    p, q = p / p.sum(), q / q.sum()
    m = 0.5 * (p + q)

    def kl(a):
        nz = a > 0
        return float(np.sum(a[nz] * np.log(a[nz] / m[nz])))

    return 0.5 * kl(p) + 0.5 * kl(q)


@dataclass
class ExactDiscriminator:
    table: np.ndarray  # P(expert | x) under equal class priors

    def __call__(self, index):
        return self.table[index]


def bayes_discriminator(rho_agent, rho_expert) -> ExactDiscriminator:
    """D = rho_E / (rho_E + rho_A), with D = 0.5 where both vanish."""
    a = np.asarray(rho_agent, dtype=np.float64)
    e = np.asarray(rho_expert, dtype=np.float64)
    if a.shape != e.shape:
        raise ValueError(f"tables differ in shape: {a.shape} vs {e.shape}")
    total = a + e
    with np.errstate(invalid="ignore", divide="ignore"):
        d = np.where(total > 0, e / np.where(total > 0, total, 1.0), 0.5)
    return ExactDiscriminator(d)


def fnv1a64(frames: np.ndarray) -> np.ndarray:
    """64-bit FNV-1a of each frame's pixel buffer, vectorised over the batch."""
    flat = np.ascontiguousarray(frames, dtype=np.uint8).reshape(len(frames), -1)
    h = np.full(len(frames), FNV_OFFSET, dtype=np.uint64)
    with np.errstate(over="ignore"):
        for j in range(flat.shape[1]):
            h ^= flat[:, j].astype(np.uint64)
            h *= FNV_PRIME
    return h


def frame_classes(frames: np.ndarray) -> np.ndarray:
    """Canonical id per frame: equal ids iff byte-identical frames.

    Hash equality is only a candidate; members of a hash bucket are split by
    byte-wise comparison, so a hash collision can never merge distinct frames.
    """
    hashes = fnv1a64(frames)
    ids = np.empty(len(frames), dtype=np.int64)
    next_id = 0
    buckets: dict[int, list[int]] = {}
    for i, h in enumerate(hashes.tolist()):
        for rep in buckets.get(h, ()):
            if np.array_equal(frames[rep], frames[i]):
                ids[i] = ids[rep]
                break
        else:
            buckets.setdefault(h, []).append(i)
            ids[i] = next_id
            next_id += 1
    return ids


@dataclass
class InjectivityReport:
    injective: bool
    collisions: list[tuple[int, int]] = field(default_factory=list)  # index pairs into the enumeration
    n_states: int = 0
    n_distinct_frames: int = 0


def injectivity_check(env: Env, rm: RenderMap, states) -> InjectivityReport:
    """Exhaustive pairwise injectivity test over an enumerated state set."""
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    frames = render(env, states, rm)
    ids = frame_classes(frames)
    groups: dict[int, list[int]] = {}
    for i, c in enumerate(ids.tolist()):
        groups.setdefault(c, []).append(i)
    collisions = []
    for members in groups.values():
        for a in range(len(members)):
            for b in range(a + 1, len(members)):
                i, j = members[a], members[b]
                if not np.array_equal(states[i], states[j]):
                    collisions.append((i, j))
    return InjectivityReport(not collisions, collisions, len(states), len(groups))


@dataclass
class EquivalenceReport:
    max_abs_diff: float
    rows: list[dict]  # one per reachable state transition
    offending: list[tuple[int, int]]  # transitions where the two discriminators disagree


def equivalence_check(mdp: GridMdp, pi_agent, pi_expert, rm: RenderMap, tol: float = 1e-12) -> EquivalenceReport:
    """Compare the Bayes-optimal discriminator over state transitions with the
    one over rendered frame transitions (pushforward of the same occupancies)."""
    occ_a = occupancy(mdp, pi_agent)
    occ_e = occupancy(mdp, pi_expert)
    d_state = bayes_discriminator(occ_a.ss, occ_e.ss).table

    n = mdp.n_states
    frame_id = frame_classes(render(mdp, np.eye(n), rm))
    k = int(frame_id.max()) + 1
    img_a = np.zeros((k, k))
    img_e = np.zeros((k, k))
    # pushforward: every state transition adds its mass to its frame transition
    for s in range(n):
        for t in range(n):
            img_a[frame_id[s], frame_id[t]] += occ_a.ss[s, t]
            img_e[frame_id[s], frame_id[t]] += occ_e.ss[s, t]
    d_image = bayes_discriminator(img_a, img_e).table

    rows, offending, worst = [], [], 0.0
    for s in range(n):
        for t in range(n):
            if occ_a.ss[s, t] + occ_e.ss[s, t] <= 0:
                continue
            di = float(d_image[frame_id[s], frame_id[t]])
            diff = abs(di - float(d_state[s, t]))
            worst = max(worst, diff)
            rows.append({"s": s, "s_next": t, "d_state": float(d_state[s, t]), "d_image": di, "abs_diff": diff})
            if diff > tol:
                offending.append((s, t))
    return EquivalenceReport(worst, rows, offending)


def pushforward_mass(mdp: GridMdp, pi, rm: RenderMap) -> tuple[float, float]:
    """(state-transition mass, image-transition mass) for one policy."""
    occ = occupancy(mdp, pi)
    frame_id = frame_classes(render(mdp, np.eye(mdp.n_states), rm))
    k = int(frame_id.max()) + 1
    img = np.zeros((k, k))
    np.add.at(img, (frame_id[:, None].repeat(mdp.n_states, 1), frame_id[None, :].repeat(mdp.n_states, 0)), occ.ss)
    return math.fsum(occ.ss.ravel()), math.fsum(img.ravel())
