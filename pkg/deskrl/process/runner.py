"""Training loops: single, synchronous and asynchronous actor-learner runs, and evaluation-only runs.

Every mode shares the same learner bookkeeping: transitions are handed to
`Agent.process` tagged with the actor that produced them, the global step
counts consumed env steps, the manager scores a snapshot every
`print_period` steps and a checkpoint is written every `save_period` steps
and at the end of training.
"""

import logging
import queue
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from deskrl.config import get_settings
from deskrl.core.agent import Agent, LearnStats, build_agent
from deskrl.core.agent.base import EVAL_STREAM
from deskrl.core.buffer import Transition
from deskrl.core.env import EnvSpec, NormalizerStats, build_env
from deskrl.errors import ActorFailure, ParameterError, StateError
from deskrl.manager.checkpoint import read_checkpoint, restore, save_checkpoint
from deskrl.manager.config_manager import ConfigTree
from deskrl.manager.log_manager import MetricsWriter, RunDir, make_run_dir
from deskrl.process.interact import Actor, ActorThread
from deskrl.process.manage import EvalResult, Manager
from deskrl.process.messages import ActorFailed, ParamUpdateMsg, RunMode, TransitionBatchMsg

logger = logging.getLogger(__name__)

TransitionHook = Callable[[int, list[Transition]], None]


@dataclass
class RunSummary:
    mode: RunMode
    run_dir: RunDir | None = None
    steps: int = 0
    # parameter versions published by the learner
    rounds: int = 0
    learn_count: int = 0
    transitions: int = 0
    episodes: int = 0
    consumed_per_actor: dict[int, int] = field(default_factory=dict)
    max_staleness: int = 0
    eval_results: list[EvalResult] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)
    wall_time: float = 0.0
    stopped_early: bool = False

    @property
    def final_score(self) -> float | None:
        return self.eval_results[-1].score if self.eval_results else None


@dataclass
class RunContext:
    """Everything a run builds before its first env step."""

    tree: ConfigTree
    seed: int
    env_options: dict
    env_spec: EnvSpec
    learner: Agent
    run_dir: RunDir
    metrics: MetricsWriter
    manager: Manager
    loaded_step: int = 0
    # learner-owned observation normaliser statistics; None when the env does not normalise
    obs_stats: NormalizerStats | None = None

    def build_agent(self, actor_id: int) -> Agent:
        return build_agent(
            self.tree.agent.model_dump(),
            self.env_spec,
            self.tree.optim.model_dump(),
            run_step=self.tree.train.run_step,
            seed=self.seed,
            actor_id=actor_id,
        )

    def build_env(self):
        return build_env(self.tree.env.name, **self.env_options)


def prepare_run(tree: ConfigTree, run_dir: RunDir | None = None, *, evaluation: bool = False) -> RunContext:
    """Build env, agents, run dir and manager; fails before any stepping on a bad config."""
    train = tree.train
    seed = train.seed if train.seed is not None else get_settings().seed
    env_options = {k: v for k, v in tree.env.model_dump().items() if k != "name"}
    env_spec = build_env(tree.env.name, **env_options).spec
    obs_stats = NormalizerStats.empty(env_spec.obs_dim) if env_options.get("normalize_obs") else None
    agent_table = tree.agent.model_dump()
    optim_table = tree.optim.model_dump()
    learner = build_agent(agent_table, env_spec, optim_table, run_step=train.run_step, seed=seed, actor_id=0)
    loaded_step = 0
    if train.load_path:
        checkpoint = read_checkpoint(train.load_path)
        restore(learner, checkpoint, train.load_path)
        loaded_step = checkpoint.step
        if obs_stats is not None and checkpoint.obs_stats is not None:
            obs_stats = checkpoint.obs_stats
        logger.info(f"Loaded parameters from {train.load_path} (step {loaded_step})")
    elif evaluation:
        logger.warning("evaluating freshly initialised parameters: train.load_path is not set")

    if run_dir is None:
        run_dir = make_run_dir(tree.env.name, tree.agent.name)
    run_dir.write_config(tree)
    eval_agent = build_agent(agent_table, env_spec, optim_table, run_step=train.run_step, seed=seed, actor_id=EVAL_STREAM)
    manager = Manager(
        eval_agent,
        build_env(tree.env.name, **env_options),
        train.eval_iteration,
        seed=seed,
        run_dir=run_dir,
        env_options=env_options,
        record=not evaluation,
        threaded=not evaluation,
    )
    metrics = MetricsWriter(run_dir.metrics_path)
    return RunContext(tree, seed, env_options, env_spec, learner, run_dir, metrics, manager, loaded_step, obs_stats)


class LearnerLoop:
    """Learner-side bookkeeping shared by every training mode."""

    def __init__(self, ctx: RunContext, mode: RunMode, transition_hook: TransitionHook | None = None):
        self.ctx = ctx
        self.agent = ctx.learner
        self.train = ctx.tree.train
        self.hook = transition_hook
        self.summary = RunSummary(mode, ctx.run_dir)
        self.step = 0
        self.version = 0
        self.obs_stats = ctx.obs_stats
        self._eval_block = 0
        self._save_block = 0
        self._last_eval_step = -1
        self._last_save_step = -1
        self._stats: list[LearnStats] = []
        self._returns: list[float] = []
        self._started = time.monotonic()

    @property
    def elapsed(self) -> float:
        return time.monotonic() - self._started

    def should_stop(self) -> bool:
        if self.step >= self.train.run_step:
            return True
        if self.train.max_wall_time is not None and self.elapsed >= self.train.max_wall_time:
            if not self.summary.stopped_early:
                logger.info(f"max_wall_time {self.train.max_wall_time}s reached at step {self.step}")
            self.summary.stopped_early = True
            return True
        return False

    def consume(
        self,
        actor_id: int,
        transitions: list[Transition],
        episode_returns=(),
        obs_stats: NormalizerStats | None = None,
    ) -> None:
        if self.hook is not None:
            self.hook(actor_id, transitions)
        self.step += len(transitions)
        self.summary.transitions += len(transitions)
        self.summary.consumed_per_actor[actor_id] = self.summary.consumed_per_actor.get(actor_id, 0) + len(transitions)
        self._returns.extend(episode_returns)
        self.summary.episodes += len(episode_returns)
        if self.obs_stats is not None and obs_stats is not None:
            self.obs_stats = self.obs_stats.merge(obs_stats)
        self._stats.extend(self.agent.process(transitions, self.step, source=actor_id))

    def consume_msg(self, msg: TransitionBatchMsg) -> None:
        if msg.param_version > self.version:
            raise StateError(f"actor {msg.actor_id} reports version {msg.param_version} ahead of learner {self.version}")
        self.summary.max_staleness = max(self.summary.max_staleness, self.version - msg.param_version)
        self.consume(msg.actor_id, list(msg.transitions), msg.episode_returns, msg.obs_stats)

    def publish(self) -> ParamUpdateMsg:
        self.version += 1
        self.summary.rounds = self.version
        return ParamUpdateMsg(self.version, self.step, self.agent.get_actor_params(), self.obs_stats)

    def tick(self) -> None:
        """Run evaluation, metric and checkpoint duties whose period boundary was crossed."""
        block = self.step // self.train.print_period
        if block > self._eval_block:
            self._eval_block = block
            self.evaluate()
        if self.train.save_period > 0:
            block = self.step // self.train.save_period
            if block > self._save_block:
                self._save_block = block
                self.checkpoint()

    def evaluate(self) -> None:
        self._log_training()
        self.ctx.manager.publish(self.step, self.version, self.agent.get_actor_params(), self.obs_stats)
        self._last_eval_step = self.step

    def checkpoint(self) -> None:
        self.summary.checkpoints.append(save_checkpoint(self.ctx.run_dir, self.agent, self.step, self.obs_stats))
        self._last_save_step = self.step

    def _log_training(self) -> None:
        values: dict[str, float] = {"train/learn_count": float(self.agent.learn_count)}
        if self._returns:
            values["train/score"] = float(np.mean(self._returns))
        if self._stats:
            metrics = [s.as_metrics("train/") for s in self._stats]
            for name in metrics[0]:
                values[name] = float(np.mean([m[name] for m in metrics if name in m]))
        self.ctx.metrics.log_scalars(self.step, values)
        score = f"{values['train/score']:.2f}" if "train/score" in values else "n/a"
        logger.info(f"step {self.step}: train score {score}, learns {self.agent.learn_count}")
        self._stats.clear()
        self._returns.clear()

    def finish(self) -> RunSummary:
        if self.step > 0 and self._last_eval_step != self.step:
            self.evaluate()
        if self.step > 0 and self._last_save_step != self.step:
            self.checkpoint()
        self.summary.eval_results = self.ctx.manager.close()
        self.summary.steps = self.step
        self.summary.learn_count = self.agent.learn_count
        self.summary.wall_time = self.elapsed
        logger.info(
            f"{self.summary.mode.value} run finished: {self.step} steps, {self.summary.learn_count} learns, "
            f"{self.summary.wall_time:.1f}s"
        )
        return self.summary


def run_single(
    tree: ConfigTree, run_dir: RunDir | None = None, *, transition_hook: TransitionHook | None = None
) -> RunSummary:
    """One agent acting and learning in a single interleaved loop."""
    if not tree.train.training:
        return run_eval(tree, run_dir)
    ctx = prepare_run(tree, run_dir)
    loop = LearnerLoop(ctx, RunMode.SINGLE, transition_hook)
    actor = Actor(0, ctx.learner, ctx.build_env(), ctx.seed)
    try:
        while not loop.should_stop():
            if loop.obs_stats is not None:
                actor.normalizer.load(loop.obs_stats)
            transition, finished = actor.interact(loop.step)
            loop.consume(0, [transition], () if finished is None else (finished,), actor.take_obs_stats())
            loop.version = ctx.learner.learn_count
            loop.summary.rounds = loop.version
            loop.tick()
    finally:
        summary = loop.finish()
    return summary


def _check_workers(tree: ConfigTree) -> None:
    if tree.train.num_workers < 1:
        raise ParameterError(f"train.num_workers must be at least 1, got {tree.train.num_workers}")
    if tree.train.update_period < 1:
        raise ParameterError(f"train.update_period must be at least 1, got {tree.train.update_period}")


def _build_actors(ctx: RunContext, count: int) -> list[Actor]:
    return [Actor(i, ctx.build_agent(i), ctx.build_env(), ctx.seed) for i in range(count)]


def run_sync(
    tree: ConfigTree, run_dir: RunDir | None = None, *, transition_hook: TransitionHook | None = None
) -> RunSummary:
    """Barrier rounds: every actor collects `update_period` transitions on one parameter version,
    the learner consumes them in actor order and broadcasts new parameters to all actors."""
    _check_workers(tree)
    if not tree.train.training:
        return run_eval(tree, run_dir)
    ctx = prepare_run(tree, run_dir)
    loop = LearnerLoop(ctx, RunMode.SYNC, transition_hook)
    num_workers, update_period = tree.train.num_workers, tree.train.update_period
    actors = _build_actors(ctx, num_workers)
    initial = ParamUpdateMsg(0, 0, ctx.learner.get_actor_params(), loop.obs_stats)
    for actor in actors:
        actor.apply_update(initial)
    logger.info(f"sync run: {num_workers} actors x {update_period} transitions per round")

    try:
        with ThreadPoolExecutor(max_workers=num_workers, thread_name_prefix="actor") as pool:
            while not loop.should_stop():
                round_start = loop.step
                futures = [pool.submit(a.collect, update_period, round_start, num_workers) for a in actors]
                msgs = []
                for actor, future in zip(actors, futures):
                    try:
                        msgs.append(future.result())
                    except Exception as e:
                        raise ActorFailure(actor.actor_id, e) from e
                for msg in msgs:
                    loop.consume_msg(msg)
                update = loop.publish()
                for actor in actors:
                    actor.apply_update(update)
                loop.tick()
    finally:
        summary = loop.finish()
    return summary


def run_async(
    tree: ConfigTree,
    run_dir: RunDir | None = None,
    *,
    transition_hook: TransitionHook | None = None,
    actor_delays: dict[int, float] | None = None,
) -> RunSummary:
    """Time-window rounds: the learner consumes whichever actor batches arrive within
    `async_window` seconds (waiting for at least one) and updates only those actors.
    The window closes early once every actor consumed in the previous round has
    reported; a late batch is taken in whichever round it arrives.

    `actor_delays` maps actor id to a per-batch sleep in seconds.
    """
    _check_workers(tree)
    window = tree.train.async_window
    if window <= 0:
        raise ParameterError(f"train.async_window must be positive, got {window}")
    if not tree.train.training:
        return run_eval(tree, run_dir)
    ctx = prepare_run(tree, run_dir)
    loop = LearnerLoop(ctx, RunMode.ASYNC, transition_hook)
    num_workers, update_period = tree.train.num_workers, tree.train.update_period
    delays = actor_delays or {}
    stop = threading.Event()
    outbox: queue.Queue = queue.Queue(maxsize=num_workers)
    workers = [
        ActorThread(actor, outbox, update_period, stop, stride=num_workers, delay=delays.get(actor.actor_id, 0.0))
        for actor in _build_actors(ctx, num_workers)
    ]
    initial = ParamUpdateMsg(0, 0, ctx.learner.get_actor_params(), loop.obs_stats)
    for worker in workers:
        worker.inbox.put(initial)
        worker.start()
    logger.info(f"async run: {num_workers} actors, window {window}s")

    def gather(expected: set[int]) -> list:
        # every actor waits for its update after posting, so at most one batch per actor is in flight
        received = []
        waiting = set(expected)
        deadline = time.monotonic() + window
        while waiting:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                break
            try:
                item = outbox.get(timeout=remaining)
            except queue.Empty:
                break
            received.append(item)
            waiting.discard(item.actor_id)
        while not received and not loop.should_stop():
            try:
                received.append(outbox.get(timeout=ActorThread.POLL))
            except queue.Empty:
                continue
        while True:
            try:
                received.append(outbox.get_nowait())
            except queue.Empty:
                return received

    expected = set(range(num_workers))
    try:
        while not loop.should_stop():
            received = gather(expected)
            if not received:
                break
            for item in received:
                if isinstance(item, ActorFailed):
                    raise ActorFailure(item.actor_id, item.error)
            for msg in received:
                loop.consume_msg(msg)
            update = loop.publish()
            for msg in received:
                workers[msg.actor_id].inbox.put(update)
            # an actor that missed this window is not waited for until its late batch is consumed
            expected = {msg.actor_id for msg in received}
            loop.tick()
    finally:
        stop.set()
        for worker in workers:
            worker.join(timeout=5.0)
        summary = loop.finish()
    return summary


def run_eval(tree: ConfigTree, run_dir: RunDir | None = None) -> RunSummary:
    """Score `train.load_path` over `eval_iteration` greedy episodes; writes only the config copy and scores."""
    ctx = prepare_run(tree, run_dir, evaluation=True)
    started = time.monotonic()
    ctx.manager.publish(ctx.loaded_step, 0, ctx.learner.get_actor_params(), ctx.obs_stats)
    results = ctx.manager.close()
    summary = RunSummary(RunMode.EVAL, ctx.run_dir, steps=ctx.loaded_step, eval_results=results)
    summary.wall_time = time.monotonic() - started
    return summary


RUNNERS: dict[RunMode, Callable[..., RunSummary]] = {
    RunMode.SINGLE: run_single,
    RunMode.SYNC: run_sync,
    RunMode.ASYNC: run_async,
    RunMode.EVAL: run_eval,
}


def run(mode: RunMode, tree: ConfigTree, run_dir: RunDir | None = None) -> RunSummary:
    return RUNNERS[mode](tree, run_dir)
