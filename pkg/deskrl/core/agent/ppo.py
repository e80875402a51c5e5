"""Proximal policy optimisation with generalised advantage estimation."""

import logging
from typing import Any

import numpy as np
from scipy.special import log_softmax, softmax

from deskrl.core.agent.base import ActionOutput, Agent, AgentConfig, LearnStats, check_finite, register_agent
from deskrl.core.agent.reinforce import entropy, sample_categorical, whiten
from deskrl.core.buffer import RolloutBuffer, Transition
from deskrl.core.env.base import EnvSpec
from deskrl.core.nncore import as_matrix
from deskrl.errors import DimensionError

logger = logging.getLogger(__name__)


class PPOConfig(AgentConfig):
    start_train_step: int = 0
    batch_size: int = 32
    horizon: int = 128
    epochs: int = 3
    clip_ratio: float = 0.2
    gae_lambda: float = 0.95
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    clip_grad_norm: float | None = 0.5


def gae(
    rewards: np.ndarray,
    values: np.ndarray,
    dones: np.ndarray,
    gamma: float,
    lam: float,
    next_values: np.ndarray | None = None,
    truncateds: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Generalised advantage estimates and value targets.

    Without `next_values`, `values` carries one bootstrap entry past the
    rollout (length T + 1). With `next_values`, both have length T and
    V(s_{t+1}) is read from `next_values[t]`, which lets a rollout span
    several episodes: `truncateds` then stops the advantage recursion at
    time-limit boundaries while still bootstrapping through them.

    Returns:
        (advantages, returns) with returns = advantages + values
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    steps = len(rewards)
    if len(dones) != steps:
        raise DimensionError(f"{len(dones)} done flags for {steps} rewards")
    if next_values is None:
        if len(values) != steps + 1:
            raise DimensionError(f"expected {steps + 1} values (one bootstrap entry), got {len(values)}")
        next_values = values[1:]
        values = values[:-1]
    else:
        next_values = np.asarray(next_values, dtype=np.float64)
        if len(values) != steps or len(next_values) != steps:
            raise DimensionError(f"expected {steps} values and next values, got {len(values)} / {len(next_values)}")
    ends = dones if truncateds is None else np.maximum(dones, np.asarray(truncateds, dtype=np.float64))

    advantages = np.zeros(steps)
    running = 0.0
    for t in range(steps - 1, -1, -1):
        delta = rewards[t] + gamma * (1.0 - dones[t]) * next_values[t] - values[t]
        running = delta + gamma * lam * (1.0 - ends[t]) * running
        advantages[t] = running
    return advantages, advantages + values


def ppo_objective(
    logits: np.ndarray,
    values: np.ndarray,
    actions: np.ndarray,
    old_log_probs: np.ndarray,
    advantages: np.ndarray,
    returns: np.ndarray,
    clip_ratio: float = 0.2,
    value_coef: float = 0.5,
    entropy_coef: float = 0.01,
) -> tuple[float, np.ndarray, np.ndarray, dict[str, float]]:
    """Clipped surrogate + value MSE - entropy bonus.

    Returns:
        (loss, d loss / d logits, d loss / d values, diagnostics)
    """
    size = len(actions)
    rows = np.arange(size)
    log_p = log_softmax(logits, axis=-1)
    probs = softmax(logits, axis=-1)
    ratio = np.exp(log_p[rows, actions] - old_log_probs)
    clipped = np.clip(ratio, 1.0 - clip_ratio, 1.0 + clip_ratio)
    surr_unclipped = ratio * advantages
    surr_clipped = clipped * advantages
    policy_loss = -float(np.mean(np.minimum(surr_unclipped, surr_clipped)))
    value_err = values - returns
    value_loss = float(np.mean(value_err**2))
    ent = entropy(logits)
    loss = policy_loss + value_coef * value_loss - entropy_coef * float(ent.mean())

    # the clipped branch has zero gradient wherever it is selected over the unclipped one
    use_unclipped = surr_unclipped <= surr_clipped
    d_log_p = np.where(use_unclipped, -advantages * ratio, 0.0) / size
    d_logits = -probs * d_log_p[:, None]
    d_logits[rows, actions] += d_log_p
    d_logits += entropy_coef * probs * (log_p + ent[:, None]) / size
    d_values = 2.0 * value_coef * value_err / size

    info = {
        "policy_loss": policy_loss,
        "value_loss": value_loss,
        "entropy": float(ent.mean()),
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > clip_ratio)),
        "approx_kl": float(np.mean(old_log_probs - log_p[rows, actions])),
    }
    return loss, d_logits, d_values, info


@register_agent("ppo")
class PPOAgent(Agent):
    """Collects `horizon` steps per source, then runs `epochs` passes of shuffled minibatches."""

    config_model = PPOConfig
    default_network = "policy_value_network"
    default_buffer = "rollout"
    network_kinds = ("policy_value",)
    buffer_kinds = ("rollout",)

    def __init__(self, config: PPOConfig, env_spec: EnvSpec, optim=None, **kwargs: Any):
        super().__init__(config, env_spec, optim, **kwargs)
        self.network = self._network(self.network_name, env_spec.obs_dim, env_spec.n_actions)
        self.optimizer = self._optimizer(self.network.parameters())
        self.rollouts: dict[int, RolloutBuffer] = {}

    def networks(self):
        return {"network": self.network}

    def actor_network_names(self) -> list[str]:
        return ["network"]

    def step_policy(self, state, step: int = 0, training: bool = True) -> ActionOutput:
        logits, value = self.network.forward(as_matrix(state, self.env_spec.obs_dim))
        logits = check_finite(logits[0], "policy logits")
        if not training:
            return ActionOutput(int(np.argmax(logits)), value=float(value[0]))
        action, log_prob = sample_categorical(logits, self.rng)
        return ActionOutput(action, log_prob=log_prob, value=float(value[0]))

    def process(self, transitions: list[Transition], step: int, source: int = 0) -> list[LearnStats]:
        rollout = self.rollouts.setdefault(source, RolloutBuffer())
        for t in transitions:
            rollout.rollout_collect(t)
        if len(rollout) >= self.config.horizon:
            return [self.ppo_learn(rollout.rollout_drain())]
        return []

    def ppo_learn(self, rollout: list[Transition]) -> LearnStats:
        if not rollout:
            return LearnStats(0.0)
        cfg = self.config
        states = np.asarray([t.state for t in rollout], dtype=np.float64)
        next_states = np.asarray([t.next_state for t in rollout], dtype=np.float64)
        actions = np.asarray([t.action for t in rollout], dtype=np.int64)
        rewards = np.asarray([t.reward for t in rollout], dtype=np.float64)
        dones = np.asarray([t.done for t in rollout], dtype=np.float64)
        truncateds = np.asarray([t.truncated for t in rollout], dtype=np.float64)

        logits, values = self.network.forward(states)
        rows = np.arange(len(rollout))
        if all(t.log_prob is not None for t in rollout):
            old_log_probs = np.asarray([t.log_prob for t in rollout], dtype=np.float64)
        else:
            old_log_probs = log_softmax(logits, axis=-1)[rows, actions]
        if all(t.value is not None for t in rollout):
            values = np.asarray([t.value for t in rollout], dtype=np.float64)
        _, next_values = self.network.forward(next_states)
        advantages, returns = gae(rewards, values, dones, cfg.gamma, cfg.gae_lambda, next_values, truncateds)
        advantages = whiten(advantages)

        history: list[tuple[float, dict[str, float]]] = []
        for _ in range(cfg.epochs):
            order = self.learn_rng.permutation(len(rollout))
            for start in range(0, len(rollout), cfg.batch_size):
                idx = order[start : start + cfg.batch_size]
                mb_logits, mb_values = self.network.forward(states[idx])
                loss, d_logits, d_values, info = ppo_objective(
                    mb_logits,
                    mb_values,
                    actions[idx],
                    old_log_probs[idx],
                    advantages[idx],
                    returns[idx],
                    cfg.clip_ratio,
                    cfg.value_coef,
                    cfg.entropy_coef,
                )
                self.network.zero_grad()
                self.network.backward(d_logits, d_values)
                info["grad_norm"] = self.optimizer.step()
                history.append((loss, info))
        self.learn_count += 1
        extras = {k: float(np.mean([h[1][k] for h in history])) for k in history[0][1]}
        return LearnStats(float(np.mean([h[0] for h in history])), extras)
