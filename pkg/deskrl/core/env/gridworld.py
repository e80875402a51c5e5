"""Deterministic 1xL chain with tabular oracles for target-rule tests."""

import numpy as np

from deskrl.core.env.base import Env, EnvSpec, Seed, register_env

LEFT, RIGHT = 0, 1


@register_env("gridworld")
class GridWorld(Env):
    """Start at cell 0, goal at cell length-1.

    Actions move one cell left or right (left at cell 0 stays put). Arriving
    at the goal pays 1 and terminates; every other step pays 0. Observations
    are one-hot cell indicators.
    """

    def __init__(self, length: int = 5, max_episode_steps: int = 100, seed: Seed = None):
        spec = EnvSpec(
            "gridworld", obs_dim=length, action_type="discrete", n_actions=2, max_episode_steps=max_episode_steps
        )
        super().__init__(spec, seed)
        self.length = length
        self.position = 0

    def one_hot(self, position: int) -> np.ndarray:
        obs = np.zeros(self.length)
        obs[position] = 1.0
        return obs

    def _reset(self) -> np.ndarray:
        self.position = 0
        return self.one_hot(0)

    def _step(self, action: int) -> tuple[np.ndarray, float, bool]:
        self.position = transition(self.position, action, self.length)
        done = self.position == self.length - 1
        return self.one_hot(self.position), 1.0 if done else 0.0, done


def transition(position: int, action: int, length: int) -> int:
    if action == RIGHT:
        return min(position + 1, length - 1)
    return max(position - 1, 0)


def value_iteration(length: int = 5, gamma: float = 0.99, tol: float = 1e-12, max_iter: int = 10_000) -> np.ndarray:
    """Optimal Q table of shape (length, 2); the goal row stays 0."""
    q = np.zeros((length, 2))
    goal = length - 1
    for _ in range(max_iter):
        new_q = np.zeros_like(q)
        for s in range(goal):
            for a in (LEFT, RIGHT):
                s_next = transition(s, a, length)
                if s_next == goal:
                    new_q[s, a] = 1.0
                else:
                    new_q[s, a] = gamma * q[s_next].max()
        delta = np.abs(new_q - q).max()
        q = new_q
        if delta < tol:
            break
    return q


def q_learning(
    env: GridWorld,
    gamma: float = 0.99,
    alpha: float = 0.5,
    episodes: int = 2000,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Tabular Q-learning with a uniformly random behaviour policy."""
    rng = rng if rng is not None else np.random.default_rng(0)
    q = np.zeros((env.length, 2))
    for _ in range(episodes):
        obs = env.reset()
        s = int(np.argmax(obs))
        while True:
            a = int(rng.integers(2))
            obs, reward, done, truncated = env.step(a)
            s_next = int(np.argmax(obs))
            target = reward if done else reward + gamma * q[s_next].max()
            q[s, a] += alpha * (target - q[s, a])
            s = s_next
            if done or truncated:
                break
    return q
