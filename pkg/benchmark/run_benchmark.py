"""CLI script to run desk-scale benchmark runs and package their results."""

import argparse
import json
import logging
import platform
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime
from pathlib import Path

import numpy as np

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from deskrl.config import get_settings
from deskrl.errors import DeskRLError
from deskrl.manager.config_manager import OverrideSpec, apply_overrides, dump_config, load_config, resolve_config_ref
from deskrl.process.runner import run_single

logger = logging.getLogger(__name__)


@dataclass
class BenchmarkConfig:
    """Which runs to launch and what they must reach."""

    config_refs: list[str] = field(
        default_factory=lambda: [
            "config.dqn.cartpole",
            "config.double.cartpole",
            "config.dueling.cartpole",
            "config.multistep.cartpole",
            "config.per.cartpole",
            "config.noisy.cartpole",
            "config.c51.cartpole",
            "config.qr_dqn.cartpole",
            "config.rainbow.cartpole",
            "config.ppo.cartpole",
            "config.reinforce.cartpole",
            "config.ddpg.pendulum",
        ]
    )
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    run_step: int | None = None  # None keeps each config's own run_step
    required_passes: int = 2  # seeds out of len(seeds) that must reach the bar


# Mean evaluation return each agent must reach; anything not listed uses the CartPole bar
SCORE_BARS = {
    "reinforce": 300.0,
    "ddpg": -300.0,
}
DEFAULT_BAR = 400.0


@dataclass
class BenchmarkResult:
    config_ref: str
    seed: int
    agent: str
    env: str
    final_score: float | None
    bar: float
    passed: bool
    steps: int
    wall_time: float
    run_dir: str


def setup_logging(verbose: bool = False):
    """Configure logging."""
    level = logging.DEBUG if verbose else logging.INFO
    logging.basicConfig(
        level=level,
        format=get_settings().log_format,
        handlers=[logging.StreamHandler()],
    )


def host_spec() -> dict[str, str]:
    return {
        "python": platform.python_version(),
        "platform": platform.platform(),
        "processor": platform.processor() or platform.machine(),
        "numpy": np.__version__,
    }


def run_one(config_ref: str, seed: int, run_step: int | None = None) -> BenchmarkResult:
    overrides = [OverrideSpec("train.seed", str(seed))]
    if run_step is not None:
        overrides.append(OverrideSpec("train.run_step", str(run_step)))
    tree = apply_overrides(load_config(resolve_config_ref(config_ref)), overrides)
    bar = SCORE_BARS.get(tree.agent.name, DEFAULT_BAR)
    summary = run_single(tree)
    score = summary.final_score
    return BenchmarkResult(
        config_ref=config_ref,
        seed=seed,
        agent=tree.agent.name,
        env=tree.env.name,
        final_score=score,
        bar=bar,
        passed=score is not None and score >= bar,
        steps=summary.steps,
        wall_time=summary.wall_time,
        run_dir=str(summary.run_dir.root) if summary.run_dir else "",
    )


def summarize(results: list[BenchmarkResult], required_passes: int) -> dict[str, dict]:
    table: dict[str, dict] = {}
    for r in results:
        entry = table.setdefault(r.config_ref, {"scores": [], "passes": 0, "bar": r.bar})
        entry["scores"].append(r.final_score)
        entry["passes"] += int(r.passed)
    for entry in table.values():
        scores = [s for s in entry["scores"] if s is not None]
        entry["mean_score"] = float(np.mean(scores)) if scores else None
        entry["accepted"] = entry["passes"] >= required_passes
    return table


def write_report(results: list[BenchmarkResult], config: BenchmarkConfig, out_dir: Path) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    report = {
        "created": datetime.now().isoformat(timespec="seconds"),
        "host": host_spec(),
        "benchmark": asdict(config),
        "configs": {
            ref: dump_config(load_config(resolve_config_ref(ref))) for ref in dict.fromkeys(r.config_ref for r in results)
        },
        "runs": [asdict(r) for r in results],
        "summary": summarize(results, config.required_passes),
    }
    path = out_dir / f"benchmark_{datetime.now().strftime('%Y%m%d%H%M%S')}.json"
    path.write_text(json.dumps(report, indent=2), encoding="utf-8")
    return path


def main():
    parser = argparse.ArgumentParser(description="Run desk-scale benchmark training runs")
    parser.add_argument(
        "--configs",
        nargs="+",
        default=None,
        help="Config references to run (default: every agent's benchmark config)",
    )
    parser.add_argument(
        "--seeds",
        type=int,
        nargs="+",
        default=None,
        help="Seeds per config (default: 0 1 2)",
    )
    parser.add_argument(
        "--run-step",
        type=int,
        default=None,
        help="Override train.run_step for every run (for smoke testing)",
    )
    parser.add_argument(
        "--verbose", "-v",
        action="store_true",
        help="Enable verbose logging",
    )

    args = parser.parse_args()
    setup_logging(args.verbose)

    config = BenchmarkConfig(run_step=args.run_step)
    if args.configs:
        config.config_refs = args.configs
    if args.seeds:
        config.seeds = args.seeds

    print("=" * 60)
    print("deskrl benchmark")
    print("=" * 60)
    print(f"  - Configs: {len(config.config_refs)}")
    print(f"  - Seeds: {config.seeds}")
    print(f"  - Run steps: {config.run_step or 'per config'}")
    print()

    results = []
    for ref in config.config_refs:
        for seed in config.seeds:
            print(f"[{ref} seed {seed}] running...")
            try:
                result = run_one(ref, seed, config.run_step)
            except DeskRLError as e:
                print(f"[{ref} seed {seed}] failed: {e}")
                return 1
            results.append(result)
            status = "PASS" if result.passed else "FAIL"
            print(f"[{ref} seed {seed}] score {result.final_score} (bar {result.bar}) {status}")

    report = write_report(results, config, get_settings().logs_root / "benchmark")
    print(f"\nDone! Report written to {report}")
    summary = summarize(results, config.required_passes)
    return 0 if all(entry["accepted"] for entry in summary.values()) else 1


if __name__ == "__main__":
    sys.exit(main())
