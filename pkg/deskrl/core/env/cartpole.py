"""Cart-pole balancing with the classic-control dynamics."""

import math
from dataclasses import dataclass

import numpy as np

from deskrl.core.env.base import Env, EnvSpec, Seed, register_env


@dataclass(frozen=True)
class CartPoleParams:
    gravity: float = 9.8
    cart_mass: float = 1.0
    pole_mass: float = 0.1
    half_length: float = 0.5
    force_mag: float = 10.0
    dt: float = 0.02
    x_threshold: float = 2.4
    theta_threshold: float = 12 * 2 * math.pi / 360

    @property
    def total_mass(self) -> float:
        return self.cart_mass + self.pole_mass

    @property
    def pole_mass_length(self) -> float:
        return self.pole_mass * self.half_length


def cartpole_accelerations(state: np.ndarray, force: float, params: CartPoleParams) -> tuple[float, float]:
    """(x_acc, theta_acc) of the frictionless cart-pole; theta is 0 upright."""
    _, _, theta, theta_dot = state
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    temp = (force + params.pole_mass_length * theta_dot**2 * sin_t) / params.total_mass
    theta_acc = (params.gravity * sin_t - cos_t * temp) / (
        params.half_length * (4.0 / 3.0 - params.pole_mass * cos_t**2 / params.total_mass)
    )
    x_acc = temp - params.pole_mass_length * theta_acc * cos_t / params.total_mass
    return x_acc, theta_acc


def cartpole_integrate(state: np.ndarray, force: float, params: CartPoleParams) -> np.ndarray:
    """One semi-implicit Euler step: velocities first, positions from the new velocities."""
    x, x_dot, theta, theta_dot = state
    x_acc, theta_acc = cartpole_accelerations(state, force, params)
    x_dot = x_dot + params.dt * x_acc
    x = x + params.dt * x_dot
    theta_dot = theta_dot + params.dt * theta_acc
    theta = theta + params.dt * theta_dot
    return np.array([x, x_dot, theta, theta_dot], dtype=np.float64)


def cartpole_energy(state: np.ndarray, params: CartPoleParams) -> float:
    """Total mechanical energy with the potential zero at the pivot height."""
    _, x_dot, theta, theta_dot = state
    m, l = params.pole_mass, params.half_length
    kinetic = (
        0.5 * params.total_mass * x_dot**2
        + m * l * x_dot * theta_dot * math.cos(theta)
        + 0.5 * (4.0 / 3.0) * m * l**2 * theta_dot**2
    )
    return kinetic + m * params.gravity * l * math.cos(theta)


@register_env("cartpole")
class CartPole(Env):
    """Keep the pole within 12 degrees and the cart within 2.4 m.

    Observation (x, x_dot, theta, theta_dot); actions 0 push left, 1 push
    right; reward 1.0 per step including the terminating one.
    """

    def __init__(self, max_episode_steps: int = 500, seed: Seed = None, params: CartPoleParams | None = None):
        spec = EnvSpec("cartpole", obs_dim=4, action_type="discrete", n_actions=2, max_episode_steps=max_episode_steps)
        super().__init__(spec, seed)
        self.params = params or CartPoleParams()
        self.state = np.zeros(4)

    def _reset(self) -> np.ndarray:
        self.state = self.rng.uniform(-0.05, 0.05, size=4)
        return self.state.copy()

    def _step(self, action: int) -> tuple[np.ndarray, float, bool]:
        force = self.params.force_mag if action == 1 else -self.params.force_mag
        self.state = cartpole_integrate(self.state, force, self.params)
        x, _, theta, _ = self.state
        done = abs(x) > self.params.x_threshold or abs(theta) > self.params.theta_threshold
        return self.state.copy(), 1.0, done
