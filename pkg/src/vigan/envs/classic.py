"""Closed-form control tasks integrated with explicit Euler steps."""

from __future__ import annotations

import math

import numpy as np

from .base import Env, EnvSpec


class CartPoleAnalog(Env):
    """Cart-pole balancing; state (x, x_dot, theta, theta_dot), theta=0 upright."""

    gravity = 9.8
    mass_cart = 1.0
    mass_pole = 0.1
    half_length = 0.5
    force_mag = 10.0
    dt = 0.02
    x_limit = 2.4
    theta_limit = 12 * 2 * math.pi / 360

    def __init__(self, horizon: int = 200, gamma: float = 0.99):
        self.spec = EnvSpec("cartpole_analog", state_dim=4, obs_dim=4, horizon=horizon, gamma=gamma,
                            n_actions=2, init={"uniform": 0.05})

    def reset(self, rng):
        return rng.uniform(-0.05, 0.05, size=4)

    def dynamics(self, state: np.ndarray, force: float) -> np.ndarray:
        x, x_dot, theta, theta_dot = state
        total = self.mass_cart + self.mass_pole
        pml = self.mass_pole * self.half_length
        cos, sin = math.cos(theta), math.sin(theta)
        temp = (force + pml * theta_dot ** 2 * sin) / total
        theta_acc = (self.gravity * sin - cos * temp) / (
            self.half_length * (4.0 / 3.0 - self.mass_pole * cos ** 2 / total))
        x_acc = temp - pml * theta_acc * cos / total
        return np.array([
            x + self.dt * x_dot,
            x_dot + self.dt * x_acc,
            theta + self.dt * theta_dot,
            theta_dot + self.dt * theta_acc,
        ])

    def terminated(self, state: np.ndarray) -> bool:
        return bool(abs(state[0]) > self.x_limit or abs(state[2]) > self.theta_limit)

    def step(self, state, action, rng=None):
        state, action = self._check(state, action)
        force = self.force_mag if int(action[0]) == 1 else -self.force_mag
        nxt = self.dynamics(state, force)
        return nxt, 1.0, self.terminated(nxt)


def wrap_angle(theta):
    return (theta + math.pi) % (2 * math.pi) - math.pi


class PendulumAnalog(Env):
    """Torque-limited pendulum swing-up; state (theta, omega), theta=0 upright."""

    gravity = 10.0
    mass = 1.0
    length = 1.0
    max_speed = 8.0
    max_torque = 2.0
    dt = 0.02

    def __init__(self, horizon: int = 200, gamma: float = 0.99):
        self.spec = EnvSpec("pendulum_analog", state_dim=2, obs_dim=3, horizon=horizon, gamma=gamma,
                            action_low=(-self.max_torque,), action_high=(self.max_torque,),
                            init={"theta": [-math.pi, math.pi], "omega": [-1.0, 1.0]})

    def reset(self, rng):
        return np.array([rng.uniform(-math.pi, math.pi), rng.uniform(-1.0, 1.0)])

    @staticmethod
    def reward(theta: float, omega: float, u: float) -> float:
        th = wrap_angle(theta)
        return -(th * th + 0.1 * omega * omega + 0.001 * u * u)

    def step(self, state, action, rng=None):
        state, action = self._check(state, action)
        theta, omega = state
        u = float(action[0])
        r = self.reward(theta, omega, u)
        acc = 3 * self.gravity / (2 * self.length) * math.sin(theta) + 3.0 / (self.mass * self.length ** 2) * u
        omega = min(max(omega + acc * self.dt, -self.max_speed), self.max_speed)
        theta = wrap_angle(theta + omega * self.dt)
        return np.array([theta, omega]), r, False

    def observe(self, states):
        s = np.asarray(states, dtype=np.float64)
        return np.stack([np.cos(s[..., 0]), np.sin(s[..., 0]), s[..., 1]], axis=-1)


class PointMass(Env):
    """Planar single integrator steered towards the origin; state (x, y) in [-1, 1]²."""

    dt = 0.1
    reward_width = 0.1

    def __init__(self, horizon: int = 50, gamma: float = 0.99):
        self.spec = EnvSpec("point_mass", state_dim=2, obs_dim=2, horizon=horizon, gamma=gamma,
                            action_low=(-1.0, -1.0), action_high=(1.0, 1.0),
                            init={"uniform": 1.0})

    def reset(self, rng):
        return rng.uniform(-1.0, 1.0, size=2)

    def step(self, state, action, rng=None):
        state, action = self._check(state, action)
        r = math.exp(-float(state @ state) / self.reward_width)
        return np.clip(state + self.dt * action, -1.0, 1.0), r, False


def point_mass_expert(gain: float = 3.0):
    """The known linear controller a = -gain * s, clipped to the action box."""

    def act(state, rng=None, deterministic=True):
        return np.clip(-gain * np.asarray(state, dtype=np.float64), -1.0, 1.0), 0.0

    return act
