"""Deterministic policy gradient with soft-updated target networks."""

import logging
from typing import Any

import numpy as np

from deskrl.core.agent.base import ActionOutput, Agent, AgentConfig, LearnStats, check_finite, register_agent, target_sync
from deskrl.core.buffer import Batch, ReplayBuffer, Transition
from deskrl.core.env.base import EnvSpec
from deskrl.core.network import DeterministicActor, QCritic, network_kind
from deskrl.core.nncore import as_matrix, mse_loss
from deskrl.errors import ConfigurationError

logger = logging.getLogger(__name__)


class DDPGConfig(AgentConfig):
    batch_size: int = 128
    start_train_step: int = 1000
    tau: float = 0.005
    noise_scale: float = 0.1
    critic_network: str = "q_critic_network"


def ddpg_actor_gradient(actor: DeterministicActor, critic: QCritic, states: np.ndarray) -> float:
    """Fill the actor's gradients for loss = -mean Q(s, actor(s)).

    The critic's gradients are left at zero so its next update is unaffected.
    """
    states = as_matrix(states, actor.spec.in_dim)
    actions = actor.forward(states)
    q = critic.forward(states, actions)
    critic.zero_grad()
    _, d_actions = critic.backward(-np.ones(len(states)) / len(states))
    critic.zero_grad()
    actor.zero_grad()
    actor.backward(d_actions)
    return -float(q.mean())


def ddpg_critic_target(
    batch: Batch, target_actor: DeterministicActor, target_critic: QCritic, gamma: float
) -> np.ndarray:
    """y = r + gamma^m (1 - done) Q_target(s', actor_target(s'))."""
    next_q = target_critic.forward(batch.next_states, target_actor.forward(batch.next_states))
    return batch.rewards + np.power(gamma, batch.steps) * (1.0 - batch.dones) * next_q


@register_agent("ddpg")
class DDPGAgent(Agent):
    config_model = DDPGConfig
    default_network = "deterministic_policy_network"
    network_kinds = ("actor",)
    buffer_kinds = ("replay",)
    action_type = "continuous"

    def __init__(self, config: DDPGConfig, env_spec: EnvSpec, optim=None, **kwargs: Any):
        super().__init__(config, env_spec, optim, **kwargs)
        low = np.asarray(env_spec.action_low)
        high = np.asarray(env_spec.action_high)
        self.action_low, self.action_high = low, high
        self.actor: DeterministicActor = self._network(
            self.network_name, env_spec.obs_dim, env_spec.action_dim, action_low=list(low), action_high=list(high)
        )
        self.critic: QCritic = self._network(config.critic_network, env_spec.obs_dim, 1, action_dim=env_spec.action_dim)
        self.target_actor = self.actor.copy()
        self.target_critic = self.critic.copy()
        lr = self.optim.lr
        self.actor_optimizer = self._optimizer(self.actor.parameters(), self.optim.actor_lr or lr)
        self.critic_optimizer = self._optimizer(self.critic.parameters(), self.optim.critic_lr or lr)
        self.noise_std = config.noise_scale * (high - low)
        self.buffer = ReplayBuffer(config.buffer_size)

    def _check_combination(self) -> None:
        super()._check_combination()
        if network_kind(self.config.critic_network) != "critic":
            raise ConfigurationError(f"agent '{self.name}': critic_network must be a critic head")

    def networks(self):
        return {
            "actor": self.actor,
            "critic": self.critic,
            "target_actor": self.target_actor,
            "target_critic": self.target_critic,
        }

    def actor_network_names(self) -> list[str]:
        return ["actor"]

    def step_policy(self, state, step: int = 0, training: bool = True) -> ActionOutput:
        action = check_finite(self.actor.forward(as_matrix(state, self.env_spec.obs_dim))[0], "actor output")
        if training:
            action = np.clip(action + self.rng.normal(0.0, self.noise_std), self.action_low, self.action_high)
        return ActionOutput(action)

    def process(self, transitions: list[Transition], step: int, source: int = 0) -> list[LearnStats]:
        self.buffer.store(transitions)
        if step >= self.config.start_train_step and len(self.buffer) >= self.config.batch_size:
            return [self.ddpg_learn(self.buffer.sample_uniform(self.config.batch_size, self.learn_rng))]
        return []

    def ddpg_learn(self, batch: Batch) -> LearnStats:
        y = ddpg_critic_target(batch, self.target_actor, self.target_critic, self.config.gamma)
        q = self.critic.forward(batch.states, batch.actions.reshape(len(batch), -1))
        critic_loss, d_q = mse_loss(q, y)
        self.critic.zero_grad()
        self.critic.backward(d_q)
        critic_norm = self.critic_optimizer.step()

        actor_loss = ddpg_actor_gradient(self.actor, self.critic, batch.states)
        actor_norm = self.actor_optimizer.step()

        target_sync(self.actor, self.target_actor, "soft", self.config.tau)
        target_sync(self.critic, self.target_critic, "soft", self.config.tau)
        self.learn_count += 1
        return LearnStats(
            critic_loss + actor_loss,
            {
                "critic_loss": critic_loss,
                "actor_loss": actor_loss,
                "mean_q": float(q.mean()),
                "critic_grad_norm": critic_norm,
                "actor_grad_norm": actor_norm,
            },
        )
