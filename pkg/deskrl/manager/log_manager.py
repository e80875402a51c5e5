"""Run directories, metric streams and evaluation trajectory records.

Layout of one run:

    <logs_root>/<env>/<agent>/<YYYYMMDDhhmmss>[-k]/
        config.yaml
        metrics.jsonl            learner statistics
        eval.jsonl               evaluation scores
        checkpoints/step_<N>.ckpt
        trajectories/step_<N>.jsonl
"""

import json
import logging
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Callable

import numpy as np
from pydantic import BaseModel, ValidationError

from deskrl.config import get_settings
from deskrl.core.agent import registry_listing as agent_listing
from deskrl.core.env import NormalizerStats, StatsMode, build_env, normalizer_of
from deskrl.core.env import registry_listing as env_listing
from deskrl.core.network import registry_listing as network_listing
from deskrl.core.optimizer import optimizer_names
from deskrl.errors import RecordFormatError, RunDirError, StateError
from deskrl.manager.config_manager import ConfigTree, load_config, save_config

logger = logging.getLogger(__name__)

TIMESTAMP_FORMAT = "%Y%m%d%H%M%S"
CONFIG_FILE = "config.yaml"
METRICS_FILE = "metrics.jsonl"
EVAL_FILE = "eval.jsonl"


@dataclass(frozen=True)
class RunDir:
    root: Path

    @property
    def config_path(self) -> Path:
        return self.root / CONFIG_FILE

    @property
    def metrics_path(self) -> Path:
        return self.root / METRICS_FILE

    @property
    def eval_path(self) -> Path:
        return self.root / EVAL_FILE

    @property
    def checkpoint_dir(self) -> Path:
        return self.root / "checkpoints"

    @property
    def trajectory_dir(self) -> Path:
        return self.root / "trajectories"

    def checkpoint_path(self, step: int) -> Path:
        return self.checkpoint_dir / f"step_{step}.ckpt"

    def trajectory_path(self, step: int) -> Path:
        return self.trajectory_dir / f"step_{step}.jsonl"

    def write_config(self, tree: ConfigTree) -> Path:
        return save_config(tree, self.config_path)

    def load_config(self) -> ConfigTree:
        return load_config(self.config_path)


def make_run_dir(
    env_name: str,
    agent_name: str,
    clock: datetime | Callable[[], datetime] | None = None,
    logs_root: str | Path | None = None,
) -> RunDir:
    """Create logs/<env>/<agent>/<timestamp>, suffixing -1, -2, ... on collision."""
    logs_root = Path(logs_root) if logs_root is not None else get_settings().logs_root
    now = clock() if callable(clock) else (clock or datetime.now())
    parent = logs_root / env_name / agent_name
    stamp = now.strftime(TIMESTAMP_FORMAT)
    try:
        parent.mkdir(parents=True, exist_ok=True)
        suffix = 0
        while True:
            root = parent / (stamp if suffix == 0 else f"{stamp}-{suffix}")
            try:
                root.mkdir()
                break
            except FileExistsError:
                suffix += 1
    except OSError as e:
        raise RunDirError(f"cannot create run directory under {parent}: {e}") from e
    logger.info(f"Run directory: {root}")
    return RunDir(root)


class MetricRecord(BaseModel):
    step: int
    name: str
    value: float
    wall_time: float


class MetricsWriter:
    """Append-only line-delimited metric stream; one writer per file."""

    def __init__(self, path: str | Path, clock: Callable[[], float] = time.time):
        self.path = Path(path)
        self.clock = clock
        self._last_step: dict[str, int] = {}
        self._lock = threading.Lock()

    def log_scalar(self, step: int, name: str, value: float) -> MetricRecord:
        with self._lock:
            if step < self._last_step.get(name, step):
                raise StateError(f"metric '{name}' step {step} precedes already logged step {self._last_step[name]}")
            record = MetricRecord(step=step, name=name, value=float(value), wall_time=self.clock())
            with self.path.open("a", encoding="utf-8") as f:
                f.write(record.model_dump_json() + "\n")
            self._last_step[name] = step
        return record

    def log_scalars(self, step: int, values: dict[str, float]) -> None:
        for name, value in values.items():
            self.log_scalar(step, name, value)


def read_metrics(path: str | Path) -> list[MetricRecord]:
    """Parse a metric stream; a truncated final line (interrupted write) is ignored."""
    lines = Path(path).read_text(encoding="utf-8").split("\n")
    records = []
    for i, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            records.append(MetricRecord.model_validate_json(line))
        except ValidationError as e:
            if i == len(lines) - 1:
                logger.warning(f"{path}: ignoring partial final record")
                break
            raise RecordFormatError(f"{path}:{i + 1}: malformed metric record") from e
    return records


@dataclass
class EpisodeRecord:
    """Everything needed to replay one evaluation episode."""

    env: str
    seed: int
    observations: list[np.ndarray] = field(default_factory=list)
    actions: list[Any] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    env_options: dict[str, Any] = field(default_factory=dict)
    # statistics the observations were normalised with
    obs_stats: NormalizerStats | None = None

    @property
    def score(self) -> float:
        return float(sum(self.rewards))

    def __len__(self) -> int:
        return len(self.actions)


def _jsonable(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    return value


def record_trajectory(path: str | Path, episode: EpisodeRecord, agent: str = "", step: int = 0) -> Path:
    """Write one header line then one (step, observation, action, reward) line per step.

    Each record holds the observation the action was chosen from, so step 0
    carries the reset observation.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "env": episode.env,
        "seed": episode.seed,
        "agent": agent,
        "step": step,
        "env_options": episode.env_options,
        "obs_stats": episode.obs_stats.to_dict() if episode.obs_stats is not None else None,
    }
    lines = [json.dumps(header)]
    for t, (obs, action, reward) in enumerate(zip(episode.observations, episode.actions, episode.rewards)):
        lines.append(
            json.dumps({"step": t, "observation": _jsonable(obs), "action": _jsonable(action), "reward": reward})
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_trajectory(path: str | Path) -> EpisodeRecord:
    lines = [line for line in Path(path).read_text(encoding="utf-8").split("\n") if line.strip()]
    if not lines:
        raise RecordFormatError(f"{path}: empty trajectory file")
    try:
        header = json.loads(lines[0])
        records = [json.loads(line) for line in lines[1:]]
        return EpisodeRecord(
            env=header["env"],
            seed=int(header["seed"]),
            observations=[np.asarray(r["observation"], dtype=np.float64) for r in records],
            actions=[r["action"] for r in records],
            rewards=[float(r["reward"]) for r in records],
            env_options=header.get("env_options", {}),
            obs_stats=NormalizerStats.from_dict(header["obs_stats"]) if header.get("obs_stats") else None,
        )
    except (json.JSONDecodeError, KeyError) as e:
        raise RecordFormatError(f"{path}: malformed trajectory record") from e


def replay_trajectory(path: str | Path) -> list[np.ndarray]:
    """Re-run a recorded episode through a fresh env and return the observations it produces."""
    episode = read_trajectory(path)
    env = build_env(episode.env, **episode.env_options)
    normalizer = normalizer_of(env)
    if normalizer is not None and episode.obs_stats is not None:
        normalizer.mode = StatsMode.FROZEN
        normalizer.load(episode.obs_stats)
    observations = [env.reset(seed=episode.seed)]
    for action in episode.actions[:-1]:
        obs, _, _, _ = env.step(action)
        observations.append(obs)
    return observations


def write_registry_listings(directory: str | Path) -> list[Path]:
    """Write one-name-per-line listings of every registry into `directory`."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    listings = {
        "_agent_dict.txt": agent_listing(),
        "_env_dict.txt": env_listing(),
        "_network_dict.txt": network_listing(),
        "_optimizer_dict.txt": "\n".join(optimizer_names()) + "\n",
    }
    paths = []
    for name, text in listings.items():
        path = directory / name
        path.write_text(text, encoding="utf-8")
        paths.append(path)
    return paths
