"""Transition storage: uniform replay, prioritized replay, rollouts and n-step windows."""

import logging
from dataclasses import dataclass, replace
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from deskrl.errors import BoundsError, ParameterError, StateError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Transition:
    """One interaction record.

    `done` is true only on genuine termination; time-limit endings set
    `truncated` instead so value targets keep bootstrapping. `steps` is the
    number of raw interactions aggregated into this record (n-step returns
    discount the bootstrap by gamma ** steps). `log_prob` and `value` carry
    the behaviour policy's outputs for on-policy learners.
    """

    state: np.ndarray
    action: Any
    reward: float
    next_state: np.ndarray
    done: bool
    truncated: bool = False
    steps: int = 1
    log_prob: float | None = None
    value: float | None = None

    @property
    def episode_end(self) -> bool:
        return self.done or self.truncated


@dataclass
class Batch:
    """Column-stacked transitions."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray
    truncateds: np.ndarray
    steps: np.ndarray
    log_probs: np.ndarray | None = None
    values: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.rewards)

    @classmethod
    def from_transitions(cls, transitions: Sequence[Transition]) -> "Batch":
        def stack_optional(name: str) -> np.ndarray | None:
            vals = [getattr(t, name) for t in transitions]
            if any(v is None for v in vals):
                return None
            return np.asarray(vals, dtype=np.float64)

        return cls(
            states=np.asarray([t.state for t in transitions], dtype=np.float64),
            actions=np.asarray([t.action for t in transitions]),
            rewards=np.asarray([t.reward for t in transitions], dtype=np.float64),
            next_states=np.asarray([t.next_state for t in transitions], dtype=np.float64),
            dones=np.asarray([t.done for t in transitions], dtype=bool),
            truncateds=np.asarray([t.truncated for t in transitions], dtype=bool),
            steps=np.asarray([t.steps for t in transitions], dtype=np.int64),
            log_probs=stack_optional("log_prob"),
            values=stack_optional("value"),
        )


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions sampled uniformly with replacement."""

    def __init__(self, capacity: int):
        if capacity <= 0:
            raise ParameterError(f"buffer capacity must be positive, got {capacity}")
        self.capacity = capacity
        self.storage: list[Transition | None] = [None] * capacity
        self.size = 0
        self._next = 0

    def __len__(self) -> int:
        return self.size

    def store(self, transitions: Iterable[Transition]) -> list[int]:
        """Append transitions, evicting the oldest at capacity. Returns slot indices."""
        slots = []
        for t in transitions:
            self.storage[self._next] = t
            slots.append(self._next)
            self._next = (self._next + 1) % self.capacity
            self.size = min(self.size + 1, self.capacity)
        return slots

    def contents(self) -> list[Transition]:
        """Stored transitions from oldest to newest."""
        if self.size < self.capacity:
            return list(self.storage[: self.size])
        return self.storage[self._next :] + self.storage[: self._next]

    def sample_uniform(self, batch_size: int, rng: np.random.Generator) -> Batch:
        if self.size < batch_size or self.size == 0:
            raise StateError(f"cannot sample {batch_size} transitions from a buffer holding {self.size}")
        idx = rng.integers(0, self.size, size=batch_size)
        return Batch.from_transitions([self.storage[i] for i in idx])


class SumTree:
    """Complete binary tree over a power-of-two number of leaves.

    Node 1 is the root, node i has children 2i and 2i+1, leaves occupy
    [capacity, 2 * capacity). Every internal node holds the sum of its
    children.
    """

    def __init__(self, capacity: int):
        if capacity <= 0:
            raise ParameterError(f"sum-tree capacity must be positive, got {capacity}")
        self.requested_capacity = capacity
        self.capacity = 1 << (capacity - 1).bit_length()
        self.nodes = np.zeros(2 * self.capacity, dtype=np.float64)

    @property
    def total(self) -> float:
        return float(self.nodes[1])

    def leaf(self, index: int) -> float:
        return float(self.nodes[self.capacity + index])

    @property
    def leaves(self) -> np.ndarray:
        return self.nodes[self.capacity :]

    def update(self, index: int, priority: float) -> None:
        if not 0 <= index < self.requested_capacity:
            raise BoundsError(f"leaf index {index} outside [0, {self.requested_capacity})")
        if priority < 0 or not np.isfinite(priority):
            raise ParameterError(f"priority must be finite and non-negative, got {priority}")
        node = self.capacity + index
        self.nodes[node] = priority
        node //= 2
        while node >= 1:
            self.nodes[node] = self.nodes[2 * node] + self.nodes[2 * node + 1]
            node //= 2

    def find(self, prefix_sums: np.ndarray) -> np.ndarray:
        """Leaf indices whose cumulative-priority interval contains each prefix sum."""
        nodes = np.ones(len(prefix_sums), dtype=np.int64)
        remaining = np.asarray(prefix_sums, dtype=np.float64).copy()
        while nodes[0] < self.capacity:
            left = 2 * nodes
            left_sum = self.nodes[left]
            go_right = remaining >= left_sum
            remaining = np.where(go_right, remaining - left_sum, remaining)
            nodes = np.where(go_right, left + 1, left)
        return nodes - self.capacity

    def check_invariant(self, tol: float = 1e-9) -> bool:
        internal = np.arange(1, self.capacity)
        sums = self.nodes[2 * internal] + self.nodes[2 * internal + 1]
        return bool(np.all(np.abs(self.nodes[internal] - sums) <= tol))


class PERBuffer(ReplayBuffer):
    """Proportional prioritized replay over a sum tree.

    Leaves store (|td| + epsilon_priority) ** alpha. New transitions enter
    with the largest priority seen so far. Sampling is stratified over
    `batch_size` equal-mass segments; importance weights are normalised by
    the largest weight in the batch.
    """

    def __init__(
        self,
        capacity: int,
        alpha: float = 0.6,
        beta: float = 0.4,
        beta_final: float = 1.0,
        anneal_steps: int = 1,
        epsilon_priority: float = 1e-6,
    ):
        super().__init__(capacity)
        if not 0.0 <= alpha <= 1.0 or not 0.0 <= beta <= 1.0:
            raise ParameterError(f"alpha and beta must lie in [0, 1], got alpha={alpha} beta={beta}")
        if epsilon_priority <= 0:
            raise ParameterError(f"epsilon_priority must be positive, got {epsilon_priority}")
        self.tree = SumTree(capacity)
        self.alpha = alpha
        self.beta_start = beta
        self.beta = beta
        self.beta_final = beta_final
        self.anneal_steps = max(1, anneal_steps)
        self.epsilon_priority = epsilon_priority
        self.max_priority = 1.0

    def anneal(self, step: int) -> float:
        """Linear beta schedule from its start value to beta_final over anneal_steps."""
        frac = min(1.0, max(0.0, step / self.anneal_steps))
        self.beta = self.beta_start + frac * (self.beta_final - self.beta_start)
        return self.beta

    def store(self, transitions: Iterable[Transition]) -> list[int]:
        slots = super().store(transitions)
        for slot in slots:
            self.tree.update(slot, self.max_priority)
        return slots

    def per_sample(self, batch_size: int, rng: np.random.Generator) -> tuple[Batch, np.ndarray, np.ndarray]:
        """Draw a prioritized batch.

        Returns:
            (batch, tree indices, importance-sampling weights)
        """
        if self.size < batch_size or self.size == 0:
            raise StateError(f"cannot sample {batch_size} transitions from a buffer holding {self.size}")
        total = self.tree.total
        segment = total / batch_size
        prefix = (np.arange(batch_size) + rng.uniform(0.0, 1.0, size=batch_size)) * segment
        prefix = np.minimum(prefix, np.nextafter(total, 0.0))
        indices = self.tree.find(prefix)
        # floating-point drift can land on an empty leaf past the filled region
        indices = np.minimum(indices, self.size - 1)
        priorities = self.tree.leaves[indices]
        probs = priorities / total
        weights = np.power(self.size * probs, -self.beta)
        weights = weights / weights.max()
        batch = Batch.from_transitions([self.storage[i] for i in indices])
        return batch, indices, weights

    def per_update_priorities(self, indices: Sequence[int], td_errors: Sequence[float]) -> None:
        for index, td in zip(indices, td_errors):
            if not 0 <= index < self.capacity:
                raise BoundsError(f"stale priority index {index} outside [0, {self.capacity})")
            priority = (abs(float(td)) + self.epsilon_priority) ** self.alpha
            self.tree.update(int(index), priority)
            self.max_priority = max(self.max_priority, priority)


class RolloutBuffer:
    """Ordered on-policy storage, emptied by every drain."""

    def __init__(self):
        self.transitions: list[Transition] = []

    def __len__(self) -> int:
        return len(self.transitions)

    def rollout_collect(self, transition: Transition, log_prob: float | None = None, value: float | None = None):
        if log_prob is not None or value is not None:
            transition = replace(
                transition,
                log_prob=transition.log_prob if log_prob is None else log_prob,
                value=transition.value if value is None else value,
            )
        self.transitions.append(transition)

    def store(self, transitions: Iterable[Transition]) -> None:
        for t in transitions:
            self.rollout_collect(t)

    def rollout_drain(self) -> list[Transition]:
        drained, self.transitions = self.transitions, []
        return drained


class MultistepQueue:
    """Aggregates consecutive transitions into n-step records.

    Windows do not overlap: every raw transition ends up in exactly one
    aggregate. A window is emitted when it holds n transitions or when the
    episode ends, whichever comes first.
    """

    def __init__(self, n: int, gamma: float):
        if n < 1:
            raise ParameterError(f"n must be at least 1, got {n}")
        if not 0.0 < gamma <= 1.0:
            raise ParameterError(f"gamma must lie in (0, 1], got {gamma}")
        self.n = n
        self.gamma = gamma
        self.pending: list[Transition] = []

    def __len__(self) -> int:
        return len(self.pending)

    def _aggregate(self) -> Transition:
        window = self.pending
        reward = sum(self.gamma**k * t.reward for k, t in enumerate(window))
        last = window[-1]
        self.pending = []
        return replace(
            window[0],
            reward=float(reward),
            next_state=last.next_state,
            done=last.done,
            truncated=last.truncated,
            steps=sum(t.steps for t in window),
        )

    def multistep_aggregate(self, transition: Transition) -> list[Transition]:
        self.pending.append(transition)
        if len(self.pending) >= self.n or transition.episode_end:
            return [self._aggregate()]
        return []

    def flush(self) -> list[Transition]:
        return [self._aggregate()] if self.pending else []


BufferFactory = Callable[..., Any]

BUFFER_KINDS = {"replay": ReplayBuffer, "per": PERBuffer, "rollout": RolloutBuffer}
