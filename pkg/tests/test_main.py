import pytest

from deskrl.core.agent import agent_names
from deskrl.main import main, parse_args
from deskrl.process.messages import RunMode
from deskrl.process.runner import RunSummary


@pytest.fixture
def launched(monkeypatch):
    """Replace the runner and record what main() would have run."""
    calls = []

    def fake_run(mode, tree, run_dir=None):
        calls.append((mode, tree))
        return RunSummary(mode, steps=tree.train.run_step)

    monkeypatch.setattr("deskrl.main.run", fake_run)
    return calls


class TestParseArgs:
    def test_defaults(self):
        cmd = parse_args([])
        assert cmd.mode is RunMode.SINGLE
        assert cmd.config_ref is None and cmd.overrides == [] and cmd.list_registry is None

    def test_mode_config_and_overrides(self):
        cmd = parse_args(["--sync", "--config", "config.ppo.cartpole", "--train.num_workers", "8", "--optim.lr=0.001"])
        assert cmd.mode is RunMode.SYNC
        assert cmd.config_ref == "config.ppo.cartpole"
        assert [(o.key_path, o.raw_value) for o in cmd.overrides] == [("train.num_workers", "8"), ("optim.lr", "0.001")]

    def test_negative_override_value(self):
        (override,) = parse_args(["--agent.v_min", "-10"]).overrides
        assert override.raw_value == "-10"

    @pytest.mark.parametrize(
        "argv",
        [
            ["--sync", "--async"],
            ["--bogus"],
            ["--train.num_workers"],
            ["--model.depth", "3"],
            ["--list", "buffers"],
        ],
    )
    def test_usage_errors_exit_with_2(self, argv, launched, capsys):
        assert main(argv) == 2
        assert "usage error" in capsys.readouterr().err
        assert launched == []


def test_overrides_reach_the_runner(launched, capsys):
    assert main(["--async", "--config", "config.dqn.cartpole", "--train.num_workers", "3", "--train.run_step=500"]) == 0
    ((mode, tree),) = launched
    assert mode is RunMode.ASYNC
    assert tree.agent.name == "dqn" and tree.env.name == "cartpole"
    assert tree.train.num_workers == 3 and tree.train.run_step == 500
    assert "Steps: 500" in capsys.readouterr().out


def test_default_config_is_used(launched):
    assert main([]) == 0
    ((mode, tree),) = launched
    assert mode is RunMode.SINGLE
    assert (tree.agent.name, tree.env.name) == ("dqn", "cartpole")


def test_list_prints_a_registry(launched, capsys):
    assert main(["--list", "agents"]) == 0
    assert capsys.readouterr().out.split() == agent_names()
    assert launched == []


@pytest.mark.parametrize(
    "argv, error",
    [
        (["--config", "config.dqn.mountaincar"], "ConfigFileError"),
        (["--train.num_workers", "four"], "ConfigTypeError"),
        (["--agent.name", "a3c"], "RegistryError"),
    ],
)
def test_errors_exit_with_1(argv, error, launched, capsys):
    assert main(argv) == 1
    assert error in capsys.readouterr().err
    assert launched == []


def test_runner_crash_exits_with_1(monkeypatch, capsys):
    def crash(mode, tree, run_dir=None):
        raise RuntimeError("boom")

    monkeypatch.setattr("deskrl.main.run", crash)
    assert main(["--train.run_step", "10"]) == 1
    assert "boom" in capsys.readouterr().err
