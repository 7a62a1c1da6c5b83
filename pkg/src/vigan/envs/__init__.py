"""Desk-scale environments and the state-to-frame render map."""

from .base import Env, EnvSpec
from .classic import CartPoleAnalog, PendulumAnalog, PointMass, point_mass_expert, wrap_angle
from .grid import GridMdp, chain, gridworld, random_mdp, two_state_cycle
from .image import PpmError, crop_shake, crop_shake_batch, read_ppm, resize_and_crop, to_grey, write_ppm
from .render import RenderMap, ignored_coordinate, render, render_observed

ENV_IDS = ("cartpole_analog", "pendulum_analog", "point_mass", "grid_mdp")


def make_env(env_id: str, **kwargs) -> Env:
    """Build an environment by id; ``grid_mdp`` defaults to a 5x5 grid world."""
    if env_id == "cartpole_analog":
        return CartPoleAnalog(**kwargs)
    if env_id == "pendulum_analog":
        return PendulumAnalog(**kwargs)
    if env_id == "point_mass":
        return PointMass(**kwargs)
    if env_id == "grid_mdp":
        return gridworld(**kwargs)
    raise ValueError(f"unknown environment {env_id!r}; expected one of {ENV_IDS}")


__all__ = [
    "ENV_IDS", "CartPoleAnalog", "Env", "EnvSpec", "GridMdp", "PendulumAnalog", "PointMass", "PpmError",
    "RenderMap", "chain", "crop_shake", "crop_shake_batch", "gridworld", "ignored_coordinate", "make_env",
    "point_mass_expert", "random_mdp", "read_ppm", "render", "render_observed", "resize_and_crop",
    "to_grey", "two_state_cycle", "wrap_angle", "write_ppm",
]
