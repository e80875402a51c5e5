"""Actor worker: steps one environment with an act-only parameter snapshot."""

import logging
import queue
import threading
import time

import numpy as np

from deskrl.core.agent import Agent
from deskrl.core.agent.base import env_seed
from deskrl.core.buffer import Transition
from deskrl.core.env import Env, NormalizerStats, StatsMode, normalizer_of
from deskrl.errors import StateError
from deskrl.process.messages import ActorFailed, ParamUpdateMsg, TransitionBatchMsg

logger = logging.getLogger(__name__)


class Actor:
    """Owns one env and one agent copy; never learns.

    The env is seeded from (seed, actor_id) and the agent's action stream
    from the same pair, so an actor's transitions depend only on the seed,
    its id and the parameter versions it receives.

    A normalising env is switched to deferred statistics: observations are
    normalised with the statistics of the last update and reported back
    as a delta with every batch.
    """

    def __init__(self, actor_id: int, agent: Agent, env: Env, seed: int = 0):
        self.actor_id = actor_id
        self.agent = agent
        self.env = env
        self.param_version = 0
        self.versions_seen: list[int] = []
        self.seq = 0
        self._state: np.ndarray | None = None
        self._episode_return = 0.0
        self._env_seed = env_seed(seed, actor_id)
        self._seeded = False
        self.normalizer = normalizer_of(env)
        if self.normalizer is not None:
            self.normalizer.mode = StatsMode.DEFERRED

    def apply_update(self, msg: ParamUpdateMsg) -> None:
        if msg.version < self.param_version:
            raise StateError(f"actor {self.actor_id}: update version {msg.version} is older than {self.param_version}")
        self.agent.set_actor_params(msg.params)
        if self.normalizer is not None and msg.obs_stats is not None:
            self.normalizer.load(msg.obs_stats)
        self.param_version = msg.version
        self.versions_seen.append(msg.version)

    def take_obs_stats(self) -> NormalizerStats | None:
        return self.normalizer.take_pending() if self.normalizer is not None else None

    def _reset(self) -> np.ndarray:
        if not self._seeded:
            self._seeded = True
            return self.env.reset(seed=self._env_seed)
        return self.env.reset()

    def interact(self, step: int) -> tuple[Transition, float | None]:
        """Take one env step; returns the transition and the episode return if the episode ended."""
        if self._state is None:
            self._state = self._reset()
            self._episode_return = 0.0
        out = self.agent.step_policy(self._state, step, training=True)
        next_state, reward, done, truncated = self.env.step(out.action)
        transition = Transition(
            self._state, out.action, reward, next_state, done, truncated, log_prob=out.log_prob, value=out.value
        )
        self._episode_return += reward
        finished = None
        if done or truncated:
            finished = self._episode_return
            self._state = None
        else:
            self._state = next_state
        return transition, finished

    def collect(self, count: int, step_base: int, stride: int = 1) -> TransitionBatchMsg:
        """Collect `count` transitions; local step i acts at global step step_base + i * stride."""
        transitions = []
        returns = []
        for i in range(count):
            transition, finished = self.interact(step_base + i * stride)
            transitions.append(transition)
            if finished is not None:
                returns.append(finished)
        msg = TransitionBatchMsg(
            self.actor_id,
            tuple(transitions),
            step_base,
            self.param_version,
            self.seq,
            tuple(returns),
            self.take_obs_stats(),
        )
        self.seq += 1
        return msg


class ActorThread:
    """Runs an Actor in a daemon thread for asynchronous collection.

    The actor collects `update_period` transitions, posts them to the shared
    `outbox` and then waits on its own `inbox` until the learner consumes
    the batch and sends back fresh parameters. Actors whose batches the
    learner has not consumed yet keep acting on their older version.
    `delay` sleeps before every batch and exists for fault injection.
    """

    POLL = 0.05

    def __init__(
        self,
        actor: Actor,
        outbox: queue.Queue,
        update_period: int,
        stop: threading.Event,
        stride: int = 1,
        delay: float = 0.0,
    ):
        self.actor = actor
        self.inbox: queue.Queue[ParamUpdateMsg] = queue.Queue()
        self.outbox = outbox
        self.update_period = update_period
        self.stop = stop
        self.stride = stride
        self.delay = delay
        self.thread = threading.Thread(target=self.run, name=f"actor-{actor.actor_id}", daemon=True)

    def start(self) -> None:
        self.thread.start()

    def join(self, timeout: float | None = None) -> None:
        self.thread.join(timeout)

    def _wait_update(self) -> ParamUpdateMsg | None:
        while not self.stop.is_set():
            try:
                return self.inbox.get(timeout=self.POLL)
            except queue.Empty:
                continue
        return None

    def _put(self, item) -> bool:
        while not self.stop.is_set():
            try:
                self.outbox.put(item, timeout=self.POLL)
                return True
            except queue.Full:
                continue
        return False

    def run(self) -> None:
        logger.debug(f"actor {self.actor.actor_id} started")
        try:
            while True:
                update = self._wait_update()
                if update is None:
                    break
                self.actor.apply_update(update)
                if self.delay > 0:
                    time.sleep(self.delay)
                msg = self.actor.collect(self.update_period, update.step, self.stride)
                if not self._put(msg):
                    break
        except Exception as e:
            logger.error(f"actor {self.actor.actor_id} failed: {e}")
            self._put(ActorFailed(self.actor.actor_id, e))
        logger.debug(f"actor {self.actor.actor_id} stopped")
