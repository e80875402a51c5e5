"""Value-based agents: DQN and its double, dueling, multistep, prioritized,
noisy, categorical (C51), quantile (QR-DQN) and Rainbow compositions.

One agent class covers the family. Which loss it trains is decided by
the value head it is given (scalar, categorical or quantile); the
remaining components are switched by hyperparameters:

    double   bootstrap action chosen by the online network
    n_step   multistep aggregation window
    buffer   replay | per
    network  any registered value network (dueling / noisy variants)
"""

import logging
from typing import Any

import numpy as np

from deskrl.core.agent.base import (
    ActionOutput,
    Agent,
    AgentConfig,
    EpsilonSchedule,
    LearnStats,
    build_agent,
    check_finite,
    register_agent,
    target_sync,
)
from deskrl.core.buffer import Batch, MultistepQueue, PERBuffer, ReplayBuffer, Transition
from deskrl.core.env.base import EnvSpec
from deskrl.core.network import (
    CategoricalSupport,
    ValueNetwork,
    categorical_probs,
    expected_q,
    quantile_midpoints,
)
from deskrl.core.nncore import as_matrix, huber_elementwise, softmax_cross_entropy
from deskrl.errors import ConfigurationError

logger = logging.getLogger(__name__)


class DQNConfig(AgentConfig):
    epsilon_init: float = 1.0
    epsilon_min: float = 0.01
    explore_ratio: float = 0.2
    double: bool = False
    n_step: int = 1
    # prioritized replay
    alpha: float = 0.6
    beta: float = 0.4
    epsilon_priority: float = 1e-6
    # distributional heads
    n_atoms: int = 51
    v_min: float = -10.0
    v_max: float = 10.0
    n_quantiles: int = 51
    kappa: float = 1.0
    # noisy heads
    sigma_init: float = 0.5
    noisy_sigma_frozen: bool = False


def _discounts(batch: Batch, gamma: float, n: int | None) -> np.ndarray:
    steps = batch.steps if n is None else np.full(len(batch), n)
    return np.power(gamma, steps) * (1.0 - batch.dones)


def dqn_target(batch: Batch, online: ValueNetwork, target_net: ValueNetwork, gamma: float, n: int | None = None) -> np.ndarray:
    """y = R + gamma^n (1 - done) max_a' Q_target(s', a').

    `n` defaults to each transition's own step count.
    """
    next_q = target_net.q_values(batch.next_states)
    return batch.rewards + _discounts(batch, gamma, n) * next_q.max(axis=1)


def double_dqn_target(
    batch: Batch, online: ValueNetwork, target_net: ValueNetwork, gamma: float, n: int | None = None
) -> np.ndarray:
    """y = R + gamma^n (1 - done) Q_target(s', argmax_a Q_online(s', a))."""
    best = online.q_values(batch.next_states).argmax(axis=1)
    next_q = target_net.q_values(batch.next_states)
    return batch.rewards + _discounts(batch, gamma, n) * next_q[np.arange(len(batch)), best]


def project_distribution(
    next_probs: np.ndarray,
    rewards: np.ndarray,
    dones: np.ndarray,
    discounts: np.ndarray,
    support: CategoricalSupport,
) -> np.ndarray:
    """Project the shifted distribution r + discount * z onto the fixed atoms.

    Each atom's mass is split linearly between the two neighbours of its
    clamped image; an image landing exactly on an atom keeps all its mass.
    """
    atoms = support.atoms
    batch, n_atoms = next_probs.shape
    scale = (np.asarray(discounts, dtype=np.float64) * (1.0 - np.asarray(dones, dtype=np.float64)))[:, None]
    tz = np.clip(np.asarray(rewards, dtype=np.float64)[:, None] + scale * atoms[None, :], support.v_min, support.v_max)
    b = (tz - support.v_min) / support.delta_z
    nearest = np.rint(b)
    b = np.where(np.abs(b - nearest) < 1e-9, nearest, b)
    lower = np.floor(b).astype(np.int64)
    upper = np.ceil(b).astype(np.int64)
    rows = np.broadcast_to(np.arange(batch)[:, None], lower.shape)
    projected = np.zeros((batch, n_atoms))
    np.add.at(projected, (rows, lower), next_probs * (upper - b))
    np.add.at(projected, (rows, upper), next_probs * (b - lower))
    np.add.at(projected, (rows, lower), next_probs * (lower == upper))
    return projected


def quantile_huber_loss(
    online: np.ndarray, target: np.ndarray, taus: np.ndarray, kappa: float = 1.0
) -> tuple[np.ndarray, np.ndarray]:
    """Pairwise quantile-Huber loss.

    Args:
        online: (batch, N) quantile estimates at fractions `taus`
        target: (batch, M) target samples
    Returns:
        per-sample loss averaged over all (i, j) pairs, and its gradient
        with respect to `online`
    """
    u = target[:, None, :] - online[:, :, None]
    h, dh = huber_elementwise(u, kappa)
    weight = np.abs(taus[None, :, None] - (u < 0.0))
    pairs = online.shape[1] * target.shape[1]
    per_sample = (weight * h / kappa).sum(axis=(1, 2)) / pairs
    grad = -(weight * dh / kappa).sum(axis=2) / pairs
    return per_sample, grad


@register_agent("dqn")
@register_agent("double", double=True)
@register_agent("dueling", network="dueling_network")
@register_agent("multistep", n_step=3)
@register_agent("per", buffer="per")
@register_agent("noisy", network="noisy_network")
@register_agent("c51", network="categorical_network")
@register_agent("qr_dqn", network="quantile_network")
@register_agent("rainbow", network="rainbow_network", buffer="per", n_step=3, double=True)
class DQNAgent(Agent):
    config_model = DQNConfig
    default_network = "discrete_q_network"
    network_kinds = ("value",)
    buffer_kinds = ("replay", "per")

    def __init__(self, config: DQNConfig, env_spec: EnvSpec, optim=None, **kwargs: Any):
        super().__init__(config, env_spec, optim, **kwargs)
        if config.n_step < 1:
            raise ConfigurationError(f"agent '{self.name}': n_step must be at least 1, got {config.n_step}")
        extra = {
            "n_atoms": config.n_atoms,
            "v_min": config.v_min,
            "v_max": config.v_max,
            "n_quantiles": config.n_quantiles,
            "sigma_init": config.sigma_init,
            "noisy_sigma_frozen": config.noisy_sigma_frozen,
        }
        self.online: ValueNetwork = self._network(self.network_name, env_spec.obs_dim, env_spec.n_actions, **extra)
        self.target: ValueNetwork = self.online.copy()
        self.optimizer = self._optimizer(self.online.parameters())
        self.schedule = EpsilonSchedule(config.epsilon_init, config.epsilon_min, config.explore_ratio, self.run_step)
        if self.buffer_name == "per":
            self.buffer = PERBuffer(
                config.buffer_size,
                alpha=config.alpha,
                beta=config.beta,
                anneal_steps=self.run_step,
                epsilon_priority=config.epsilon_priority,
            )
        else:
            self.buffer = ReplayBuffer(config.buffer_size)
        self.target_rule = double_dqn_target if config.double else dqn_target
        self.queues: dict[int, MultistepQueue] = {}
        self._sync_block = 0

    def networks(self):
        return {"online": self.online, "target": self.target}

    def actor_network_names(self) -> list[str]:
        return ["online"]

    def sync_target(self) -> None:
        target_sync(self.online, self.target, "hard")

    def step_policy(self, state, step: int = 0, training: bool = True) -> ActionOutput:
        state = as_matrix(state, self.env_spec.obs_dim)
        if training and not self.online.is_noisy:
            if self.rng.random() < self.schedule(step):
                return ActionOutput(int(self.rng.integers(self.env_spec.n_actions)))
        if training:
            self.online.reset_noise(self.rng)
            q = self.online.q_values(state)
        else:
            self.online.eval()
            try:
                q = self.online.q_values(state)
            finally:
                self.online.train()
        check_finite(q, f"{self.name} action values")
        return ActionOutput(int(np.argmax(q[0])))

    def process(self, transitions: list[Transition], step: int, source: int = 0) -> list[LearnStats]:
        queue = self.queues.setdefault(source, MultistepQueue(self.config.n_step, self.config.gamma))
        for t in transitions:
            self.buffer.store(queue.multistep_aggregate(t))
        if isinstance(self.buffer, PERBuffer):
            self.buffer.anneal(step)
        block = step // self.config.target_update_period
        if block > self._sync_block:
            self.sync_target()
            self._sync_block = block
        if step >= self.config.start_train_step and len(self.buffer) >= self.config.batch_size:
            return [self.learn()]
        return []

    def learn(self) -> LearnStats:
        if isinstance(self.buffer, PERBuffer):
            batch, indices, weights = self.buffer.per_sample(self.config.batch_size, self.learn_rng)
            stats, priorities = self.learn_batch(batch, weights)
            self.buffer.per_update_priorities(indices, priorities)
            stats.extras["beta"] = self.buffer.beta
        else:
            batch = self.buffer.sample_uniform(self.config.batch_size, self.learn_rng)
            stats, _ = self.learn_batch(batch)
        return stats

    def learn_batch(self, batch: Batch, weights: np.ndarray | None = None) -> tuple[LearnStats, np.ndarray]:
        """One optimizer step on `batch`.

        Per-sample losses are multiplied by `weights` (importance weights
        under PER) before averaging.

        Returns:
            (stats, per-sample priority signal)
        """
        size = len(batch)
        weights = np.ones(size) if weights is None else np.asarray(weights, dtype=np.float64)
        if self.online.is_noisy:
            self.online.reset_noise(self.learn_rng)
            self.target.reset_noise(self.learn_rng)
        if self.online.value_type == "categorical":
            raw, per_sample, grad_taken, taken, priorities = self._categorical_loss(batch)
        elif self.online.value_type == "quantile":
            raw, per_sample, grad_taken, taken, priorities = self._quantile_loss(batch)
        else:
            raw, per_sample, grad_taken, taken, priorities = self._scalar_loss(batch)

        grad = np.zeros_like(raw)
        rows = np.arange(size)
        grad[rows, batch.actions.astype(np.int64)] = weights[:, None] * grad_taken / size
        self.online.zero_grad()
        self.online.backward(grad)
        grad_norm = self.optimizer.step()
        self.learn_count += 1

        loss = float(np.mean(weights * per_sample))
        stats = LearnStats(loss, {"mean_q": float(np.mean(taken)), "grad_norm": grad_norm})
        return stats, priorities

    def _scalar_loss(self, batch: Batch):
        y = self.target_rule(batch, self.online, self.target, self.config.gamma)
        raw = self.online.forward(batch.states)
        q_taken = raw[np.arange(len(batch)), batch.actions.astype(np.int64), 0]
        td = check_finite(q_taken - y, f"{self.name} TD errors")
        values, derivs = huber_elementwise(td, self.config.kappa)
        return raw, values, derivs[:, None], q_taken, np.abs(td)

    def _categorical_loss(self, batch: Batch):
        rows = np.arange(len(batch))
        support = self.online.support
        next_probs = categorical_probs(self.target.forward(batch.next_states))
        if self.config.double:
            best = self.online.q_values(batch.next_states).argmax(axis=1)
        else:
            best = expected_q(next_probs, support).argmax(axis=1)
        projected = project_distribution(
            next_probs[rows, best], batch.rewards, batch.dones, np.power(self.config.gamma, batch.steps), support
        )
        raw = self.online.forward(batch.states)
        logits = check_finite(raw[rows, batch.actions.astype(np.int64)], f"{self.name} atom logits")
        losses, grad = softmax_cross_entropy(logits, projected)
        return raw, losses, grad, expected_q(categorical_probs(logits), support), losses

    def _quantile_loss(self, batch: Batch):
        rows = np.arange(len(batch))
        next_theta = self.target.forward(batch.next_states)
        if self.config.double:
            best = self.online.q_values(batch.next_states).argmax(axis=1)
        else:
            best = next_theta.mean(axis=-1).argmax(axis=1)
        discounts = np.power(self.config.gamma, batch.steps) * (1.0 - batch.dones)
        target = batch.rewards[:, None] + discounts[:, None] * next_theta[rows, best]
        raw = self.online.forward(batch.states)
        theta = check_finite(raw[rows, batch.actions.astype(np.int64)], f"{self.name} quantiles")
        taus = quantile_midpoints(theta.shape[1])
        losses, grad = quantile_huber_loss(theta, target, taus, self.config.kappa)
        return raw, losses, grad, theta.mean(axis=1), losses


def compose_rainbow(
    table: dict[str, Any], env_spec: EnvSpec, optim_table: dict[str, Any] | None = None, **kwargs: Any
) -> DQNAgent:
    """Build a Rainbow agent and check that all of its components are wired in.

    Rainbow combines double targets, a dueling noisy categorical head,
    multistep aggregation and prioritized replay; any table that swaps
    one of them for something that cannot fill its role is rejected.
    """
    agent = build_agent({**table, "name": "rainbow"}, env_spec, optim_table, **kwargs)
    problems = []
    if not agent.online.dueling:
        problems.append("network has no dueling streams")
    if not agent.online.is_noisy:
        problems.append("network has no noisy layers")
    if agent.online.value_type == "quantile":
        problems.append("network has a quantile head")
    if not isinstance(agent.buffer, PERBuffer):
        problems.append("buffer is not prioritized")
    if not agent.config.double:
        problems.append("double targets are disabled")
    if problems:
        raise ConfigurationError(f"rainbow composition is incomplete: {'; '.join(problems)}")
    logger.info(
        f"Composed rainbow: {agent.network_name} ({agent.online.value_type}), "
        f"n_step={agent.config.n_step}, per alpha={agent.buffer.alpha}"
    )
    return agent
