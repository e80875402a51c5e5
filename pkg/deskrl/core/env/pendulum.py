"""Torque-limited inverted pendulum swing-up."""

import math

import numpy as np

from deskrl.core.env.base import Env, EnvSpec, Seed, register_env

MAX_SPEED = 8.0
MAX_TORQUE = 2.0
DT = 0.05
GRAVITY = 10.0
MASS = 1.0
LENGTH = 1.0


def angle_normalize(theta: float) -> float:
    return ((theta + math.pi) % (2 * math.pi)) - math.pi


@register_env("pendulum")
class Pendulum(Env):
    """Observation (cos theta, sin theta, theta_dot), one torque in [-2, 2].

    Reward is -(theta^2 + 0.1 theta_dot^2 + 0.001 u^2) with theta wrapped to
    [-pi, pi); episodes never terminate and are truncated at the time limit.
    """

    def __init__(self, max_episode_steps: int = 200, seed: Seed = None):
        spec = EnvSpec(
            "pendulum",
            obs_dim=3,
            action_type="continuous",
            action_dim=1,
            action_low=(-MAX_TORQUE,),
            action_high=(MAX_TORQUE,),
            max_episode_steps=max_episode_steps,
        )
        super().__init__(spec, seed)
        self.theta = 0.0
        self.theta_dot = 0.0

    def _observation(self) -> np.ndarray:
        return np.array([math.cos(self.theta), math.sin(self.theta), self.theta_dot])

    def _reset(self) -> np.ndarray:
        self.theta = float(self.rng.uniform(-math.pi, math.pi))
        self.theta_dot = float(self.rng.uniform(-1.0, 1.0))
        return self._observation()

    def _step(self, action: np.ndarray) -> tuple[np.ndarray, float, bool]:
        u = float(action[0])
        cost = angle_normalize(self.theta) ** 2 + 0.1 * self.theta_dot**2 + 0.001 * u**2
        theta_dot = self.theta_dot + (
            3 * GRAVITY / (2 * LENGTH) * math.sin(self.theta) + 3.0 / (MASS * LENGTH**2) * u
        ) * DT
        self.theta_dot = float(np.clip(theta_dot, -MAX_SPEED, MAX_SPEED))
        self.theta = self.theta + self.theta_dot * DT
        return self._observation(), -cost, False
