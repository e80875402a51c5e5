"""Environment base class, episode lifecycle and the env registry."""

import inspect
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Sequence

import numpy as np

from deskrl.errors import (
    BoundsError,
    ConfigurationError,
    DimensionError,
    ParameterError,
    RegistryError,
    StateError,
    UnsupportedEnvironmentError,
)

logger = logging.getLogger(__name__)

# Names of external bindings that are recognised but not shipped
UNSUPPORTED_BINDINGS = ["atari", "gym", "mujoco", "procgen", "mario", "ml_agents"]

Seed = int | Sequence[int] | None


@dataclass(frozen=True)
class EnvSpec:
    """Static description of an environment's interface."""

    name: str
    obs_dim: int
    action_type: str
    max_episode_steps: int
    n_actions: int = 0
    action_dim: int = 0
    action_low: tuple[float, ...] = ()
    action_high: tuple[float, ...] = ()

    def __post_init__(self):
        if self.obs_dim <= 0:
            raise ParameterError(f"obs_dim must be positive, got {self.obs_dim}")
        if self.max_episode_steps <= 0:
            raise ParameterError(f"max_episode_steps must be positive, got {self.max_episode_steps}")
        if self.action_type == "discrete":
            if self.n_actions < 2:
                raise ParameterError(f"a discrete action space needs at least 2 actions, got {self.n_actions}")
        elif self.action_type == "continuous":
            if self.action_dim <= 0 or len(self.action_low) != self.action_dim or len(self.action_high) != self.action_dim:
                raise ParameterError(f"continuous bounds must have {self.action_dim} entries")
            if any(lo >= hi for lo, hi in zip(self.action_low, self.action_high)):
                raise ParameterError(f"action bounds must satisfy low < high, got {self.action_low} / {self.action_high}")
        else:
            raise ParameterError(f"action_type must be 'discrete' or 'continuous', got '{self.action_type}'")

    @property
    def is_discrete(self) -> bool:
        return self.action_type == "discrete"

    @property
    def action_size(self) -> int:
        """Network output width: number of actions or action dimensions."""
        return self.n_actions if self.is_discrete else self.action_dim


class Env:
    """Episode lifecycle shared by every built-in environment.

    Subclasses implement `_reset` and `_step`; this class owns the step
    counter, action validation, time-limit truncation and the rule that a
    finished episode must be reset before stepping again.
    """

    name: str = ""

    def __init__(self, spec: EnvSpec, seed: Seed = None):
        self.spec = spec
        self.rng = np.random.default_rng(seed)
        self.steps = 0
        self._needs_reset = True

    def reset(self, seed: Seed = None) -> np.ndarray:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.steps = 0
        self._needs_reset = False
        return self._reset()

    def step(self, action) -> tuple[np.ndarray, float, bool, bool]:
        """Advance one step.

        Returns:
            (observation, reward, done, truncated); done marks termination,
            truncated marks the time limit and is never raised together with done.
        """
        if self._needs_reset:
            raise StateError(f"{self.spec.name}: step called before reset or after the episode ended")
        action = self.validate_action(action)
        obs, reward, done = self._step(action)
        self.steps += 1
        truncated = not done and self.steps >= self.spec.max_episode_steps
        if done or truncated:
            self._needs_reset = True
        return obs, float(reward), bool(done), bool(truncated)

    def validate_action(self, action):
        if self.spec.is_discrete:
            values = np.asarray(action).reshape(-1)
            if values.size != 1:
                raise BoundsError(f"{self.spec.name}: expected one discrete action, got {values.size} values")
            try:
                value = float(values[0])
            except (TypeError, ValueError) as e:
                raise BoundsError(f"{self.spec.name}: action {values[0]!r} is not a number") from e
            if not value.is_integer():
                raise BoundsError(f"{self.spec.name}: discrete action {value} is not an integer")
            index = int(value)
            if not 0 <= index < self.spec.n_actions:
                raise BoundsError(f"{self.spec.name}: action {index} outside [0, {self.spec.n_actions})")
            return index
        action = np.asarray(action, dtype=np.float64).reshape(self.spec.action_dim)
        low = np.asarray(self.spec.action_low)
        high = np.asarray(self.spec.action_high)
        if np.any(action < low) or np.any(action > high):
            logger.warning(f"{self.spec.name}: action {action} clipped to [{low}, {high}]")
            action = np.clip(action, low, high)
        return action

    def sample_action(self, rng: np.random.Generator):
        """Uniformly random valid action."""
        if self.spec.is_discrete:
            return int(rng.integers(self.spec.n_actions))
        return rng.uniform(self.spec.action_low, self.spec.action_high)

    def _reset(self) -> np.ndarray:
        raise NotImplementedError

    def _step(self, action) -> tuple[np.ndarray, float, bool]:
        raise NotImplementedError


class StatsMode(str, Enum):
    """How a normalizer treats the observations it sees.

    LOCAL folds every observation into the statistics it normalises with.
    DEFERRED normalises with statistics loaded from outside and keeps the
    observations in a pending delta until `take_pending`. FROZEN only reads.
    """

    LOCAL = "local"
    DEFERRED = "deferred"
    FROZEN = "frozen"


@dataclass(frozen=True)
class NormalizerStats:
    """Observation count, mean and sum of squared deviations; never mutated in place."""

    count: int
    mean: np.ndarray
    m2: np.ndarray

    @classmethod
    def empty(cls, dim: int) -> "NormalizerStats":
        return cls(0, np.zeros(dim), np.zeros(dim))

    @property
    def var(self) -> np.ndarray:
        return self.m2 / self.count if self.count > 1 else np.ones_like(self.mean)

    def add(self, obs: np.ndarray) -> "NormalizerStats":
        count = self.count + 1
        delta = obs - self.mean
        mean = self.mean + delta / count
        return NormalizerStats(count, mean, self.m2 + delta * (obs - mean))

    def merge(self, other: "NormalizerStats") -> "NormalizerStats":
        """Combine two disjoint sets of observations (pairwise Welford update)."""
        if other.count == 0:
            return self
        if self.count == 0:
            return other
        if other.mean.shape != self.mean.shape:
            raise DimensionError(f"cannot merge normalizer statistics of shape {other.mean.shape} into {self.mean.shape}")
        count = self.count + other.count
        delta = other.mean - self.mean
        mean = self.mean + delta * (other.count / count)
        m2 = self.m2 + other.m2 + delta**2 * (self.count * other.count / count)
        return NormalizerStats(count, mean, m2)

    def to_dict(self) -> dict[str, Any]:
        return {"count": self.count, "mean": self.mean.tolist(), "m2": self.m2.tolist()}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "NormalizerStats":
        return cls(int(data["count"]), np.asarray(data["mean"], dtype=np.float64), np.asarray(data["m2"], dtype=np.float64))


class ObservationNormalizer:
    """Running mean/variance (Welford) with clipped standardised output."""

    def __init__(self, dim: int, clip: float = 10.0, epsilon: float = 1e-8, mode: StatsMode = StatsMode.LOCAL):
        self.stats = NormalizerStats.empty(dim)
        self.pending = NormalizerStats.empty(dim)
        self.clip = clip
        self.epsilon = epsilon
        self.mode = StatsMode(mode)

    @property
    def count(self) -> int:
        return self.stats.count

    @property
    def mean(self) -> np.ndarray:
        return self.stats.mean

    @property
    def var(self) -> np.ndarray:
        return self.stats.var

    def update(self, obs: np.ndarray) -> None:
        if self.mode is StatsMode.LOCAL:
            self.stats = self.stats.add(obs)
        elif self.mode is StatsMode.DEFERRED:
            self.pending = self.pending.add(obs)

    def load(self, stats: NormalizerStats) -> None:
        if stats.mean.shape != self.stats.mean.shape:
            raise DimensionError(f"normalizer statistics have shape {stats.mean.shape}, expected {self.stats.mean.shape}")
        self.stats = stats

    def take_pending(self) -> NormalizerStats:
        """Return the observations gathered since the last call and start a new delta."""
        pending = self.pending
        self.pending = NormalizerStats.empty(len(self.stats.mean))
        return pending

    def normalize(self, obs: np.ndarray) -> np.ndarray:
        return np.clip((obs - self.mean) / np.sqrt(self.var + self.epsilon), -self.clip, self.clip)


class NormalizedEnv(Env):
    """Wraps an env and standardises its observations with running statistics."""

    def __init__(self, env: Env, mode: StatsMode = StatsMode.LOCAL):
        self.env = env
        self.normalizer = ObservationNormalizer(env.spec.obs_dim, mode=mode)
        self.spec = env.spec
        self.name = env.name

    @property
    def steps(self) -> int:
        return self.env.steps

    def reset(self, seed: Seed = None) -> np.ndarray:
        return self._observe(self.env.reset(seed))

    def step(self, action):
        obs, reward, done, truncated = self.env.step(action)
        return self._observe(obs), reward, done, truncated

    def validate_action(self, action):
        return self.env.validate_action(action)

    def _observe(self, obs: np.ndarray) -> np.ndarray:
        self.normalizer.update(obs)
        return self.normalizer.normalize(obs)


def normalizer_of(env: Env) -> ObservationNormalizer | None:
    return env.normalizer if isinstance(env, NormalizedEnv) else None


EnvFactory = Callable[..., Env]

_ENVS: dict[str, EnvFactory] = {}
_warned_options: set[tuple[str, str]] = set()


def register_env(name: str):
    """Class decorator adding an environment to the registry."""

    def decorator(cls: EnvFactory) -> EnvFactory:
        _ENVS[name] = cls
        if isinstance(cls, type):
            cls.name = name
        return cls

    return decorator


def env_names() -> list[str]:
    return sorted(_ENVS)


def registry_listing() -> str:
    return "\n".join(env_names()) + "\n"


def env_class(name: str) -> EnvFactory:
    if name in _ENVS:
        return _ENVS[name]
    if name.lower() in UNSUPPORTED_BINDINGS:
        raise UnsupportedEnvironmentError(name, env_names(), UNSUPPORTED_BINDINGS)
    raise RegistryError("env", name, env_names())


def build_env(name: str, seed: Seed = None, **options: Any) -> Env:
    """Build a registered env from its config table entries.

    `render` is accepted and ignored; `normalize_obs` wraps the env in a
    running observation normaliser; `action_type` must match the env's
    own. Keys the env constructor does not accept are dropped, with one
    warning per env and key.
    """
    cls = env_class(name)
    options = dict(options)
    if options.pop("render", False):
        logger.debug(f"{name}: render requested; trajectories are recorded instead")
    normalize = bool(options.pop("normalize_obs", False))
    declared_type = options.pop("action_type", None)
    accepted = set(inspect.signature(cls).parameters)
    unknown = sorted(set(options) - accepted)
    for key in unknown:
        if (name, key) not in _warned_options:
            _warned_options.add((name, key))
            logger.warning(f"env '{name}' ignores unknown option '{key}'")
        options.pop(key)
    env = cls(seed=seed, **options)
    if declared_type is not None and declared_type != env.spec.action_type:
        raise ConfigurationError(f"env '{name}' has a {env.spec.action_type} action space, config declares '{declared_type}'")
    return NormalizedEnv(env) if normalize else env
