"""Messages exchanged between actors and the learner."""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from deskrl.core.buffer import Transition
from deskrl.core.env import NormalizerStats
from deskrl.errors import ParameterError


class RunMode(str, Enum):
    SINGLE = "single"
    SYNC = "sync"
    ASYNC = "async"
    EVAL = "eval"


@dataclass(frozen=True)
class TransitionBatchMsg:
    """Transitions one actor collected under a single parameter version."""

    actor_id: int
    transitions: tuple[Transition, ...]
    actor_step: int
    param_version: int
    # (actor_id, seq) is unique over a run
    seq: int = 0
    episode_returns: tuple[float, ...] = ()
    # observations seen since the previous batch, when the env normalises
    obs_stats: NormalizerStats | None = None

    def __post_init__(self):
        if not self.transitions:
            raise ParameterError(f"actor {self.actor_id} sent an empty transition batch")

    def __len__(self) -> int:
        return len(self.transitions)


@dataclass(frozen=True)
class ParamUpdateMsg:
    """Act-only parameter snapshot broadcast by the learner."""

    version: int
    step: int
    params: dict[str, list[np.ndarray]] = field(default_factory=dict)
    obs_stats: NormalizerStats | None = None


@dataclass(frozen=True)
class ActorFailed:
    """Sent in place of a batch when an actor thread raises."""

    actor_id: int
    error: BaseException
