"""Monte-Carlo policy gradient."""

import logging
from typing import Any

import numpy as np
from scipy.special import log_softmax, softmax

from deskrl.core.agent.base import ActionOutput, Agent, AgentConfig, LearnStats, check_finite, register_agent
from deskrl.core.buffer import RolloutBuffer, Transition
from deskrl.core.env.base import EnvSpec
from deskrl.core.nncore import as_matrix

logger = logging.getLogger(__name__)


class ReinforceConfig(AgentConfig):
    start_train_step: int = 0
    batch_size: int = 1


def discounted_returns(rewards: np.ndarray, gamma: float) -> np.ndarray:
    """G_t = sum_k gamma^k r_{t+k} within one episode."""
    returns = np.zeros(len(rewards))
    running = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        running = rewards[t] + gamma * running
        returns[t] = running
    return returns


def whiten(x: np.ndarray, std_floor: float = 1e-8) -> np.ndarray:
    return (x - x.mean()) / max(float(x.std()), std_floor)


def entropy(logits: np.ndarray) -> np.ndarray:
    """Per-row entropy of the categorical distribution softmax(logits)."""
    return -np.sum(softmax(logits, axis=-1) * log_softmax(logits, axis=-1), axis=-1)


def sample_categorical(logits: np.ndarray, rng: np.random.Generator) -> tuple[int, float]:
    """Draw one action from softmax(logits); returns it with its log-probability."""
    log_p = log_softmax(logits)
    action = int(rng.choice(len(logits), p=np.exp(log_p)))
    return action, float(log_p[action])


@register_agent("reinforce")
class ReinforceAgent(Agent):
    """Learns at the end of every episode from its whitened discounted returns."""

    config_model = ReinforceConfig
    default_network = "policy_network"
    default_buffer = "rollout"
    network_kinds = ("policy",)
    buffer_kinds = ("rollout",)

    def __init__(self, config: ReinforceConfig, env_spec: EnvSpec, optim=None, **kwargs: Any):
        super().__init__(config, env_spec, optim, **kwargs)
        self.policy = self._network(self.network_name, env_spec.obs_dim, env_spec.n_actions)
        self.optimizer = self._optimizer(self.policy.parameters())
        self.rollouts: dict[int, RolloutBuffer] = {}

    def networks(self):
        return {"policy": self.policy}

    def actor_network_names(self) -> list[str]:
        return ["policy"]

    def step_policy(self, state, step: int = 0, training: bool = True) -> ActionOutput:
        logits = check_finite(self.policy.forward(as_matrix(state, self.env_spec.obs_dim))[0], "policy logits")
        if not training:
            return ActionOutput(int(np.argmax(logits)))
        action, log_prob = sample_categorical(logits, self.rng)
        return ActionOutput(action, log_prob=log_prob)

    def process(self, transitions: list[Transition], step: int, source: int = 0) -> list[LearnStats]:
        rollout = self.rollouts.setdefault(source, RolloutBuffer())
        stats = []
        for t in transitions:
            rollout.rollout_collect(t)
            if t.episode_end:
                stats.append(self.reinforce_learn(rollout.rollout_drain()))
        return stats

    def reinforce_learn(self, episode: list[Transition]) -> LearnStats:
        """loss = -sum_t log pi(a_t | s_t) * G_t with whitened returns."""
        states = np.asarray([t.state for t in episode], dtype=np.float64)
        actions = np.asarray([t.action for t in episode], dtype=np.int64)
        rewards = np.asarray([t.reward for t in episode], dtype=np.float64)
        returns = whiten(discounted_returns(rewards, self.config.gamma))
        logits = self.policy.forward(states)
        rows = np.arange(len(episode))
        log_p = log_softmax(logits, axis=-1)
        loss = -float(np.sum(log_p[rows, actions] * returns))
        # d(-log pi(a))/d logits = softmax - onehot
        grad = softmax(logits, axis=-1)
        grad[rows, actions] -= 1.0
        grad *= returns[:, None]
        self.policy.zero_grad()
        self.policy.backward(grad)
        grad_norm = self.optimizer.step()
        self.learn_count += 1
        return LearnStats(
            loss,
            {"entropy": float(entropy(logits).mean()), "episode_length": float(len(episode)), "grad_norm": grad_norm},
        )
