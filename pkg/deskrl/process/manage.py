"""Manage worker: scores parameter snapshots and records evaluation episodes."""

import logging
import queue
import threading
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from deskrl.core.agent import Agent
from deskrl.core.agent.base import EVAL_STREAM, make_rng
from deskrl.core.env import Env, NormalizerStats, StatsMode, normalizer_of
from deskrl.manager.log_manager import EpisodeRecord, MetricsWriter, RunDir, record_trajectory

logger = logging.getLogger(__name__)

SEED_LIMIT = 2**31


def run_episode(agent: Agent, env: Env, seed: int, env_options: dict[str, Any] | None = None) -> EpisodeRecord:
    """Play one greedy episode from `env.reset(seed)`."""
    normalizer = normalizer_of(env)
    episode = EpisodeRecord(
        env=env.name,
        seed=seed,
        env_options=dict(env_options or {}),
        obs_stats=normalizer.stats if normalizer is not None else None,
    )
    state = env.reset(seed=seed)
    while True:
        action = agent.act(state, training=False)
        next_state, reward, done, truncated = env.step(action)
        episode.observations.append(state)
        episode.actions.append(action)
        episode.rewards.append(reward)
        if done or truncated:
            return episode
        state = next_state


def evaluate(
    agent: Agent, env: Env, episodes: int, rng: np.random.Generator, env_options: dict[str, Any] | None = None
) -> list[EpisodeRecord]:
    """Run `episodes` greedy episodes, each reset with a seed drawn from `rng`."""
    seeds = rng.integers(SEED_LIMIT, size=episodes)
    return [run_episode(agent, env, int(s), env_options) for s in seeds]


@dataclass(frozen=True)
class Snapshot:
    step: int
    version: int
    params: dict[str, list[np.ndarray]]
    obs_stats: NormalizerStats | None = None


@dataclass
class EvalResult:
    step: int
    score: float
    scores: list[float] = field(default_factory=list)


class Manager:
    """Evaluates published snapshots in order, off the learner's thread.

    The manager owns its own agent copy and env and only ever reads the
    snapshots it is handed. A normalising env is frozen and loaded with
    the statistics published alongside each snapshot. An evaluation that
    raises is logged and skipped; it never stops training.
    """

    def __init__(
        self,
        agent: Agent,
        env: Env,
        eval_iteration: int,
        seed: int = 0,
        run_dir: RunDir | None = None,
        env_options: dict[str, Any] | None = None,
        record: bool = True,
        threaded: bool = True,
        max_pending: int = 4,
    ):
        self.agent = agent
        self.env = env
        self.normalizer = normalizer_of(env)
        if self.normalizer is not None:
            self.normalizer.mode = StatsMode.FROZEN
        self.eval_iteration = eval_iteration
        self.rng = make_rng(seed, EVAL_STREAM)
        self.run_dir = run_dir
        self.env_options = dict(env_options or {})
        self.record = record
        self.writer = MetricsWriter(run_dir.eval_path) if run_dir is not None else None
        self.results: list[EvalResult] = []
        self.failures = 0
        self.latest: Snapshot | None = None
        self._lock = threading.Lock()
        self._pending: queue.Queue[Snapshot | None] = queue.Queue(maxsize=max_pending)
        self._thread = threading.Thread(target=self._run, name="manager", daemon=True) if threaded else None
        if self._thread is not None:
            self._thread.start()

    def publish(
        self,
        step: int,
        version: int,
        params: dict[str, list[np.ndarray]],
        obs_stats: NormalizerStats | None = None,
    ) -> None:
        """Hand over a snapshot for evaluation; blocks while the manager is `max_pending` behind."""
        snapshot = Snapshot(step, version, {k: [a.copy() for a in v] for k, v in params.items()}, obs_stats)
        with self._lock:
            self.latest = snapshot
        if self._thread is None:
            self._evaluate(snapshot)
        else:
            self._pending.put(snapshot)

    def close(self) -> list[EvalResult]:
        if self._thread is not None:
            self._pending.put(None)
            self._thread.join()
            self._thread = None
        return self.results

    def _run(self) -> None:
        while True:
            snapshot = self._pending.get()
            if snapshot is None:
                return
            self._evaluate(snapshot)

    def _evaluate(self, snapshot: Snapshot) -> EvalResult | None:
        try:
            self.agent.set_actor_params(snapshot.params)
            if self.normalizer is not None and snapshot.obs_stats is not None:
                self.normalizer.load(snapshot.obs_stats)
            episodes = evaluate(self.agent, self.env, self.eval_iteration, self.rng, self.env_options)
            scores = [e.score for e in episodes]
            result = EvalResult(snapshot.step, float(np.mean(scores)), scores)
            if self.writer is not None:
                self.writer.log_scalar(snapshot.step, "eval/score", result.score)
            if self.record and self.run_dir is not None and episodes:
                record_trajectory(
                    self.run_dir.trajectory_path(snapshot.step), episodes[-1], self.agent.name, snapshot.step
                )
        except Exception as e:
            self.failures += 1
            logger.warning(f"evaluation at step {snapshot.step} failed: {type(e).__name__}: {e}")
            return None
        self.results.append(result)
        logger.info(f"step {snapshot.step}: eval score {result.score:.2f} over {len(scores)} episodes")
        return result
