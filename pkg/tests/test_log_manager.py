from datetime import datetime

import numpy as np
import pytest

from conftest import small_tree
from deskrl.core.agent import agent_names
from deskrl.core.env import build_env, env_names
from deskrl.errors import RecordFormatError, RunDirError, StateError
from deskrl.manager.log_manager import (
    EpisodeRecord,
    MetricsWriter,
    make_run_dir,
    read_metrics,
    read_trajectory,
    record_trajectory,
    replay_trajectory,
    write_registry_listings,
)

STAMP = datetime(2021, 11, 23, 14, 10, 4)


class TestRunDir:
    def test_layout(self, logs_root):
        run = make_run_dir("cartpole", "dqn", clock=STAMP, logs_root=logs_root)
        assert run.root == logs_root / "cartpole" / "dqn" / "20211123141004"
        assert run.root.is_dir()
        assert run.checkpoint_path(500).name == "step_500.ckpt"
        assert run.checkpoint_path(500).parent.name == "checkpoints"
        assert run.trajectory_path(500).parts[-2:] == ("trajectories", "step_500.jsonl")

    def test_collisions_get_suffixes(self, logs_root):
        names = [make_run_dir("cartpole", "dqn", clock=lambda: STAMP, logs_root=logs_root).root.name for _ in range(3)]
        assert names == ["20211123141004", "20211123141004-1", "20211123141004-2"]

    def test_settings_supply_the_default_root(self, logs_root):
        assert make_run_dir("gridworld", "ppo", clock=STAMP).root.parent == logs_root / "gridworld" / "ppo"

    def test_unwritable_root(self, tmp_path):
        blocker = tmp_path / "blocker"
        blocker.write_text("not a directory")
        with pytest.raises(RunDirError):
            make_run_dir("cartpole", "dqn", logs_root=blocker)

    def test_config_round_trip(self, run_dir):
        tree = small_tree()
        run_dir.write_config(tree)
        assert run_dir.load_config() == tree


class TestMetrics:
    def test_records_are_appended(self, tmp_path):
        writer = MetricsWriter(tmp_path / "metrics.jsonl", clock=lambda: 12.5)
        writer.log_scalars(10, {"loss": 0.5, "q_mean": 1.25})
        writer.log_scalar(10, "loss", 0.4)
        writer.log_scalar(20, "loss", 0.3)
        records = read_metrics(tmp_path / "metrics.jsonl")
        assert [(r.step, r.name, r.value) for r in records] == [
            (10, "loss", 0.5),
            (10, "q_mean", 1.25),
            (10, "loss", 0.4),
            (20, "loss", 0.3),
        ]
        assert all(r.wall_time == 12.5 for r in records)

    def test_step_may_not_go_back(self, tmp_path):
        writer = MetricsWriter(tmp_path / "metrics.jsonl")
        writer.log_scalar(20, "loss", 1.0)
        writer.log_scalar(5, "reward", 1.0)
        with pytest.raises(StateError):
            writer.log_scalar(19, "loss", 1.0)

    def test_partial_last_line_is_skipped(self, tmp_path):
        path = tmp_path / "metrics.jsonl"
        writer = MetricsWriter(path)
        writer.log_scalar(1, "loss", 1.0)
        writer.log_scalar(2, "loss", 2.0)
        with path.open("a", encoding="utf-8") as f:
            f.write('{"step": 3, "na')
        assert [r.step for r in read_metrics(path)] == [1, 2]

    def test_malformed_middle_line(self, tmp_path):
        path = tmp_path / "metrics.jsonl"
        path.write_text(
            '{"step": 1, "name": "loss", "value": 1.0, "wall_time": 0.0}\n'
            "garbage\n"
            '{"step": 2, "name": "loss", "value": 1.0, "wall_time": 0.0}\n'
        )
        with pytest.raises(RecordFormatError, match=":2:"):
            read_metrics(path)


def walk_right(length: int = 5) -> EpisodeRecord:
    env = build_env("gridworld", length=length)
    episode = EpisodeRecord(env="gridworld", seed=11, env_options={"length": length})
    state = env.reset(seed=11)
    while True:
        next_state, reward, done, truncated = env.step(1)
        episode.observations.append(state)
        episode.actions.append(1)
        episode.rewards.append(reward)
        if done or truncated:
            return episode
        state = next_state


class TestTrajectory:
    def test_gridworld_episode(self, tmp_path):
        path = record_trajectory(tmp_path / "traj.jsonl", walk_right(), agent="dqn", step=300)
        lines = path.read_text().splitlines()
        assert len(lines) == 5
        episode = read_trajectory(path)
        assert episode.rewards == [0.0, 0.0, 0.0, 1.0]
        assert episode.actions == [1, 1, 1, 1]
        assert episode.score == 1.0 and len(episode) == 4
        np.testing.assert_array_equal(episode.observations[0], [1.0, 0.0, 0.0, 0.0, 0.0])

    def test_replay_reproduces_observations(self, tmp_path):
        env = build_env("cartpole")
        episode = EpisodeRecord(env="cartpole", seed=7)
        state = env.reset(seed=7)
        for t in range(30):
            action = t % 2
            next_state, reward, done, truncated = env.step(action)
            episode.observations.append(state)
            episode.actions.append(action)
            episode.rewards.append(reward)
            if done or truncated:
                break
            state = next_state
        path = record_trajectory(tmp_path / "cartpole.jsonl", episode)
        replayed = replay_trajectory(path)
        assert len(replayed) == len(episode.observations)
        for got, want in zip(replayed, episode.observations):
            np.testing.assert_array_equal(got, want)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        with pytest.raises(RecordFormatError):
            read_trajectory(path)

    def test_malformed_record(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"env": "gridworld", "seed": 0}\n{"step": 0, "observation": [1.0]\n')
        with pytest.raises(RecordFormatError):
            read_trajectory(path)


def test_registry_listings(tmp_path):
    paths = write_registry_listings(tmp_path / "registry")
    assert sorted(p.name for p in paths) == ["_agent_dict.txt", "_env_dict.txt", "_network_dict.txt", "_optimizer_dict.txt"]
    listing = {p.name: p.read_text().split() for p in paths}
    assert listing["_agent_dict.txt"] == agent_names()
    assert listing["_env_dict.txt"] == env_names()
    assert "adam" in listing["_optimizer_dict.txt"]
    assert "dueling_network" in listing["_network_dict.txt"]
