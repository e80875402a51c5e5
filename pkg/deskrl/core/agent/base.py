"""Agent base class, shared hyperparameters, exploration schedule and the agent registry."""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, ClassVar

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator

from deskrl.core.env.base import EnvSpec
from deskrl.core.network import DEFAULT_HIDDEN, Network, NetworkSpec, network_kind, registry_build
from deskrl.core.optimizer import Optimizer, build_optimizer
from deskrl.errors import ConfigTypeError, ConfigurationError, NumericalError, ParameterError, RegistryError

logger = logging.getLogger(__name__)

# SeedSequence stream ids; actor streams use the actor id itself
LEARNER_STREAM = 2**16
EVAL_STREAM = 2**16 + 1
ENV_STREAM = 1


def seed_sequence(seed: int, *stream: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), *[int(s) for s in stream]])


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(seed, *stream))


def env_seed(seed: int, actor_id: int) -> np.random.SeedSequence:
    """Seed for the env owned by `actor_id`, independent of its action stream."""
    return seed_sequence(seed, actor_id, ENV_STREAM)


@dataclass(frozen=True)
class EpsilonSchedule:
    """Linear decay from epsilon_init to epsilon_min over explore_ratio * run_step steps."""

    epsilon_init: float = 1.0
    epsilon_min: float = 0.01
    explore_ratio: float = 0.2
    run_step: int = 100_000

    def __post_init__(self):
        if not (0.0 <= self.epsilon_min <= 1.0 and 0.0 <= self.epsilon_init <= 1.0):
            raise ParameterError(f"epsilons must lie in [0, 1], got {self.epsilon_init} / {self.epsilon_min}")
        if not 0.0 < self.explore_ratio <= 1.0:
            raise ParameterError(f"explore_ratio must lie in (0, 1], got {self.explore_ratio}")

    @property
    def explore_steps(self) -> float:
        return self.explore_ratio * self.run_step

    def __call__(self, step: int) -> float:
        return epsilon(self, step)


def epsilon(schedule: EpsilonSchedule, step: int) -> float:
    if step >= schedule.explore_steps:
        return schedule.epsilon_min
    frac = max(0, step) / schedule.explore_steps
    return schedule.epsilon_init + frac * (schedule.epsilon_min - schedule.epsilon_init)


def target_sync(online: Network, target: Network, mode: str = "hard", tau: float = 1.0) -> None:
    """Copy (hard) or blend (soft, target <- tau * online + (1 - tau) * target) parameters."""
    if mode == "hard":
        target.set_params(online.get_params())
    elif mode == "soft":
        if not 0.0 < tau <= 1.0:
            raise ParameterError(f"tau must lie in (0, 1], got {tau}")
        blended = [tau * o + (1.0 - tau) * t for o, t in zip(online.get_params(), target.get_params())]
        target.set_params(blended)
    else:
        raise ParameterError(f"target sync mode must be 'hard' or 'soft', got '{mode}'")


@dataclass
class ActionOutput:
    """An action plus the behaviour-policy outputs on-policy learners store."""

    action: Any
    log_prob: float | None = None
    value: float | None = None


@dataclass
class LearnStats:
    loss: float
    extras: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        values = [self.loss, *self.extras.values()]
        if not all(math.isfinite(v) for v in values):
            raise NumericalError(f"non-finite learn statistics: loss={self.loss} extras={self.extras}")

    def as_metrics(self, prefix: str = "") -> dict[str, float]:
        return {f"{prefix}loss": self.loss, **{f"{prefix}{k}": v for k, v in self.extras.items()}}


def check_finite(values: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(values)):
        raise NumericalError(f"{what} contains NaN or inf")
    return values


class AgentConfig(BaseModel):
    """Hyperparameters every agent understands; subclasses add their own."""

    model_config = ConfigDict(extra="allow")

    name: str
    gamma: float = 0.99
    batch_size: int = 32
    buffer_size: int = 50_000
    start_train_step: int = 2000
    target_update_period: int = 500
    network: str | None = None
    buffer: str | None = None
    hidden: list[int] = list(DEFAULT_HIDDEN)
    clip_grad_norm: float | None = None

    @field_validator("gamma")
    @classmethod
    def gamma_in_range(cls, v: float) -> float:
        if not 0.0 < v <= 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {v}")
        return v


class OptimConfig(BaseModel):
    """The optim table."""

    model_config = ConfigDict(extra="allow")

    name: str = "adam"
    lr: float = 1e-4
    actor_lr: float | None = None
    critic_lr: float | None = None
    clip_grad_norm: float | None = None


class Agent:
    """Act/process entry points shared by every algorithm.

    An agent owns two random streams: `rng` drives action selection and
    `learn_rng` drives sampling and noise during learning, so acting and
    learning never perturb each other's sequences.
    """

    config_model: ClassVar[type[AgentConfig]] = AgentConfig
    default_network: ClassVar[str] = ""
    default_buffer: ClassVar[str] = "replay"
    network_kinds: ClassVar[tuple[str, ...]] = ()
    buffer_kinds: ClassVar[tuple[str, ...]] = ("replay", "per")
    action_type: ClassVar[str] = "discrete"

    def __init__(
        self,
        config: AgentConfig,
        env_spec: EnvSpec,
        optim: OptimConfig | None = None,
        *,
        run_step: int = 100_000,
        seed: int = 0,
        actor_id: int = 0,
        name: str = "",
    ):
        self.name = name or config.name
        self.config = config
        self.env_spec = env_spec
        self.optim = optim or OptimConfig()
        self.run_step = run_step
        self.seed = seed
        self.actor_id = actor_id
        self.rng = make_rng(seed, actor_id)
        self.learn_rng = make_rng(seed, LEARNER_STREAM)
        self.learn_count = 0
        self._networks_built = 0
        self.network_name = config.network or self.default_network
        self.buffer_name = config.buffer or self.default_buffer
        self._check_combination()

    def _check_combination(self) -> None:
        if self.env_spec.action_type != self.action_type:
            raise ConfigurationError(
                f"agent '{self.name}' needs a {self.action_type} action space; "
                f"env '{self.env_spec.name}' is {self.env_spec.action_type}"
            )
        kind = network_kind(self.network_name)
        if kind not in self.network_kinds:
            raise ConfigurationError(
                f"agent '{self.name}' cannot use network '{self.network_name}' of kind '{kind}' "
                f"(needs one of: {', '.join(self.network_kinds)})"
            )
        if self.buffer_name not in self.buffer_kinds:
            raise ConfigurationError(
                f"agent '{self.name}' cannot use buffer '{self.buffer_name}' "
                f"(supported: {', '.join(self.buffer_kinds)})"
            )

    def _network(self, name: str, in_dim: int, out_dim: int, **extra) -> Network:
        spec = NetworkSpec(name, in_dim, out_dim, list(self.config.hidden), extra)
        # initialised from the seed alone so the learner and every actor start from identical weights
        init_rng = make_rng(self.seed, LEARNER_STREAM, self._networks_built)
        self._networks_built += 1
        return registry_build(spec, init_rng)

    def _optimizer(self, params, lr: float | None = None) -> Optimizer:
        clip = self.optim.clip_grad_norm if self.optim.clip_grad_norm is not None else self.config.clip_grad_norm
        extra = self.optim.model_extra or {}
        return build_optimizer(self.optim.name, params, lr if lr is not None else self.optim.lr, clip, **extra)

    def act(self, state, step: int = 0, training: bool = True):
        return self.step_policy(state, step, training).action

    def step_policy(self, state, step: int = 0, training: bool = True) -> ActionOutput:
        raise NotImplementedError

    def process(self, transitions, step: int, source: int = 0) -> list[LearnStats]:
        """Ingest transitions from `source` at global `step` and learn per the agent's cadence."""
        raise NotImplementedError

    def networks(self) -> dict[str, Network]:
        """Every network that defines the agent, targets included."""
        raise NotImplementedError

    def actor_network_names(self) -> list[str]:
        """Networks an act-only copy needs."""
        raise NotImplementedError

    def get_actor_params(self) -> dict[str, list[np.ndarray]]:
        nets = self.networks()
        return {name: nets[name].get_params() for name in self.actor_network_names()}

    def set_actor_params(self, params: dict[str, list[np.ndarray]]) -> None:
        nets = self.networks()
        for name, values in params.items():
            nets[name].set_params(values)

    def state_dict(self) -> dict[str, list[np.ndarray]]:
        return {name: net.get_params() for name, net in self.networks().items()}

    def load_state_dict(self, state: dict[str, list[np.ndarray]]) -> None:
        nets = self.networks()
        missing = set(nets) - set(state)
        if missing:
            raise ConfigurationError(f"agent '{self.name}' state is missing networks: {sorted(missing)}")
        for name, net in nets.items():
            net.set_params(state[name])

    def rng_states(self) -> dict[str, dict]:
        return {"act": self.rng.bit_generator.state, "learn": self.learn_rng.bit_generator.state}

    def set_rng_states(self, states: dict[str, dict]) -> None:
        self.rng.bit_generator.state = states["act"]
        self.learn_rng.bit_generator.state = states["learn"]


AgentClass = type[Agent]

_AGENTS: dict[str, tuple[AgentClass, dict[str, Any]]] = {}
_warned_keys: set[tuple[str, str]] = set()


def register_agent(name: str, **preset: Any):
    """Class decorator adding an agent under `name`.

    `preset` holds hyperparameter defaults for this name; config-file
    values override them. One class may be registered under several names.
    """

    def decorator(cls: AgentClass) -> AgentClass:
        _AGENTS[name] = (cls, preset)
        return cls

    return decorator


def agent_names() -> list[str]:
    return sorted(_AGENTS)


def registry_listing() -> str:
    return "\n".join(agent_names()) + "\n"


def agent_class(name: str) -> tuple[AgentClass, dict[str, Any]]:
    if name not in _AGENTS:
        raise RegistryError("agent", name, list(_AGENTS))
    return _AGENTS[name]


def agent_config(table: dict[str, Any]) -> AgentConfig:
    """Validate an agent table against the registered agent's hyperparameter model."""
    name = table.get("name")
    if not name:
        raise ConfigurationError("agent table has no 'name'")
    cls, preset = agent_class(name)
    # a null in the config falls back to the preset rather than erasing it
    values = dict(preset)
    values.update({k: v for k, v in table.items() if v is not None or k not in preset})
    try:
        config = cls.config_model(**values)
    except ValidationError as e:
        raise ConfigTypeError(f"agent '{name}': {e.errors()[0]['loc']}: {e.errors()[0]['msg']}") from e
    for key in sorted(config.model_extra or {}):
        if (name, key) not in _warned_keys:
            _warned_keys.add((name, key))
            logger.warning(f"agent '{name}' does not use config key '{key}'")
    if cls.default_buffer != "rollout" and config.start_train_step < config.batch_size:
        raise ConfigurationError(
            f"agent '{name}': start_train_step ({config.start_train_step}) must be >= batch_size ({config.batch_size})"
        )
    return config


def build_agent(
    table: dict[str, Any],
    env_spec: EnvSpec,
    optim_table: dict[str, Any] | None = None,
    *,
    run_step: int = 100_000,
    seed: int = 0,
    actor_id: int = 0,
) -> Agent:
    """Build the agent named in `table` for `env_spec`."""
    config = agent_config(table)
    cls, _ = agent_class(config.name)
    try:
        optim = OptimConfig(**(optim_table or {}))
    except ValidationError as e:
        raise ConfigTypeError(f"optim table: {e.errors()[0]['loc']}: {e.errors()[0]['msg']}") from e
    logger.debug(f"Building agent {config.name} (actor {actor_id}) for env {env_spec.name}")
    return cls(config, env_spec, optim, run_step=run_step, seed=seed, actor_id=actor_id, name=config.name)
