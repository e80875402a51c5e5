from deskrl.core.env.base import (
    UNSUPPORTED_BINDINGS,
    Env,
    EnvSpec,
    NormalizedEnv,
    NormalizerStats,
    ObservationNormalizer,
    StatsMode,
    build_env,
    env_class,
    env_names,
    normalizer_of,
    register_env,
    registry_listing,
)
from deskrl.core.env.cartpole import CartPole, CartPoleParams
from deskrl.core.env.gridworld import GridWorld, q_learning, value_iteration
from deskrl.core.env.pendulum import Pendulum

__all__ = [
    "UNSUPPORTED_BINDINGS",
    "CartPole",
    "CartPoleParams",
    "Env",
    "EnvSpec",
    "GridWorld",
    "NormalizedEnv",
    "NormalizerStats",
    "ObservationNormalizer",
    "Pendulum",
    "StatsMode",
    "build_env",
    "env_class",
    "env_names",
    "normalizer_of",
    "q_learning",
    "register_env",
    "registry_listing",
    "value_iteration",
]
