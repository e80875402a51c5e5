"""Command-line entry point.

    python -m deskrl.main [--single | --sync | --async | --eval] [--config config.<agent>.<env>]
                          [--<table>.<key> <value> ...]

Examples:
    python -m deskrl.main --config config.dqn.cartpole
    python -m deskrl.main --sync --config config.ppo.cartpole --train.num_workers 8
    python -m deskrl.main --eval --config config.dqn.cartpole --train.load_path logs/.../step_100000.ckpt
"""

import argparse
import logging
import sys
from dataclasses import dataclass, field

from deskrl.config import get_settings
from deskrl.core.agent import agent_names
from deskrl.core.env import env_names
from deskrl.core.network import network_names
from deskrl.core.optimizer import optimizer_names
from deskrl.errors import DeskRLError, UsageError
from deskrl.manager.config_manager import OverrideSpec, apply_overrides, load_config, resolve_config_ref, validate_names
from deskrl.process.messages import RunMode
from deskrl.process.runner import RunSummary, run

logger = logging.getLogger(__name__)

REGISTRIES = {
    "agents": agent_names,
    "envs": env_names,
    "networks": network_names,
    "optimizers": optimizer_names,
}


def setup_logging(verbose: bool = False):
    """Configure logging."""
    settings = get_settings()
    level = logging.DEBUG if verbose else getattr(logging, settings.log_level.upper(), logging.INFO)
    logging.basicConfig(
        level=level,
        format=settings.log_format,
        handlers=[logging.StreamHandler()],
    )


@dataclass
class LaunchCommand:
    mode: RunMode = RunMode.SINGLE
    config_ref: str | None = None
    overrides: list[OverrideSpec] = field(default_factory=list)
    list_registry: str | None = None
    verbose: bool = False


class LaunchParser(argparse.ArgumentParser):
    """ArgumentParser that raises UsageError instead of exiting."""

    def error(self, message: str):
        raise UsageError(f"{message}\n\n{self.format_help()}")


def _registry_epilog() -> str:
    lines = ["registered components:"]
    for kind, names in REGISTRIES.items():
        lines.append(f"  {kind}: {', '.join(names())}")
    lines.append("")
    lines.append("any config value can be overridden with --<table>.<key> <value> (tables: env, agent, optim, train)")
    return "\n".join(lines)


def build_parser() -> LaunchParser:
    parser = LaunchParser(
        prog="deskrl",
        description="Train or evaluate a reinforcement-learning agent from a configuration document",
        epilog=_registry_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
        allow_abbrev=False,
    )
    modes = parser.add_mutually_exclusive_group()
    modes.add_argument("--single", dest="mode", action="store_const", const=RunMode.SINGLE, help="one process acts and learns (default)")
    modes.add_argument("--sync", dest="mode", action="store_const", const=RunMode.SYNC, help="distributed actors, barrier rounds")
    modes.add_argument("--async", dest="mode", action="store_const", const=RunMode.ASYNC, help="distributed actors, time-window rounds")
    modes.add_argument("--eval", dest="mode", action="store_const", const=RunMode.EVAL, help="evaluate train.load_path without training")
    parser.add_argument(
        "--config",
        dest="config_ref",
        default=None,
        help="config reference config.<agent>.<env>, without extension (default: config.dqn.cartpole)",
    )
    parser.add_argument("--list", dest="list_registry", choices=sorted(REGISTRIES), help="print one registry and exit")
    parser.add_argument("--verbose", "-v", action="store_true", help="Enable verbose logging")
    return parser


def _parse_overrides(parser: LaunchParser, tokens: list[str]) -> list[OverrideSpec]:
    overrides = []
    i = 0
    while i < len(tokens):
        token = tokens[i]
        if not token.startswith("--") or "." not in token:
            parser.error(f"unrecognized argument: {token}")
        key, sep, value = token[2:].partition("=")
        if not sep:
            if i + 1 >= len(tokens):
                parser.error(f"override {token} needs a value")
            value = tokens[i + 1]
            i += 1
        try:
            overrides.append(OverrideSpec(key, value))
        except DeskRLError as e:
            parser.error(str(e))
        i += 1
    return overrides


def parse_args(argv: list[str] | None = None) -> LaunchCommand:
    parser = build_parser()
    args, rest = parser.parse_known_args(argv)
    return LaunchCommand(
        mode=args.mode or RunMode.SINGLE,
        config_ref=args.config_ref,
        overrides=_parse_overrides(parser, rest),
        list_registry=args.list_registry,
        verbose=args.verbose,
    )


def _print_summary(summary: RunSummary) -> None:
    print("\n" + "=" * 60)
    print(f"Run complete ({summary.mode.value})")
    print("=" * 60)
    if summary.run_dir is not None:
        print(f"Run directory: {summary.run_dir.root}")
    print(f"Steps: {summary.steps}")
    print(f"Learner updates: {summary.learn_count}")
    if summary.final_score is not None:
        print(f"Final evaluation score: {summary.final_score:.2f}")


def dispatch(cmd: LaunchCommand) -> int:
    if cmd.list_registry:
        print("\n".join(REGISTRIES[cmd.list_registry]()))
        return 0
    path = resolve_config_ref(cmd.config_ref)
    tree = validate_names(apply_overrides(load_config(path), cmd.overrides))
    logger.info(f"Config {path} ({tree.agent.name} on {tree.env.name}), mode {cmd.mode.value}")
    summary = run(cmd.mode, tree)
    _print_summary(summary)
    return 0


def main(argv: list[str] | None = None) -> int:
    try:
        cmd = parse_args(argv)
    except UsageError as e:
        print(f"deskrl: usage error: {e}", file=sys.stderr)
        return 2
    setup_logging(cmd.verbose)
    try:
        return dispatch(cmd)
    except DeskRLError as e:
        logger.error(f"{type(e).__name__}: {e}")
        print(f"deskrl: {type(e).__module__}.{type(e).__name__}: {e}", file=sys.stderr)
        return 1
    except Exception as e:
        logger.exception(f"Run failed: {e}")
        print(f"deskrl: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
