"""Checkpoint codec.

A checkpoint is three text lines followed by a binary payload:

    DESKRL-CKPT
    {"magic": ..., "format_version": 1, "agent": ..., "step": ..., "wall_time": ..., ...}
    {"config": ..., "env_spec": ..., "shapes": ..., "rng": ..., "obs_stats": ...}
    <every parameter array, little-endian float64, row-major>

`obs_stats` holds the learner's observation normaliser statistics, or null
when the env does not normalise.

The header carries the payload's length and SHA-256 so truncated or
corrupted files are rejected before any parameter is touched.
"""

import dataclasses
import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from deskrl.core.agent import Agent, build_agent
from deskrl.core.env import EnvSpec, NormalizerStats
from deskrl.errors import CheckpointIntegrityError, CompatibilityError, DimensionError
from deskrl.manager.log_manager import RunDir

logger = logging.getLogger(__name__)

MAGIC = "DESKRL-CKPT"
FORMAT_VERSION = 1
DTYPE = "<f8"


@dataclass
class Checkpoint:
    header: dict[str, Any]
    manifest: dict[str, Any]
    state: dict[str, list[np.ndarray]]

    @property
    def agent_name(self) -> str:
        return self.header["agent"]

    @property
    def step(self) -> int:
        return self.header["step"]

    @property
    def obs_stats(self) -> NormalizerStats | None:
        data = self.manifest.get("obs_stats")
        return NormalizerStats.from_dict(data) if data else None


def encode_checkpoint(
    agent: Agent, step: int, wall_time: float | None = None, obs_stats: NormalizerStats | None = None
) -> bytes:
    state = agent.state_dict()
    names = sorted(state)
    payload = b"".join(np.ascontiguousarray(a, dtype=DTYPE).tobytes() for name in names for a in state[name])
    manifest = {
        "config": {
            "agent": agent.config.model_dump(),
            "optim": agent.optim.model_dump(),
            "run_step": agent.run_step,
            "seed": agent.seed,
            "actor_id": agent.actor_id,
        },
        "env_spec": dataclasses.asdict(agent.env_spec),
        "shapes": {name: [list(a.shape) for a in state[name]] for name in names},
        "rng": agent.rng_states(),
        "obs_stats": obs_stats.to_dict() if obs_stats is not None else None,
    }
    header = {
        "magic": MAGIC,
        "format_version": FORMAT_VERSION,
        "agent": agent.name,
        "step": int(step),
        "wall_time": time.time() if wall_time is None else wall_time,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
        "payload_bytes": len(payload),
    }
    lines = [MAGIC, json.dumps(header, sort_keys=True), json.dumps(manifest, sort_keys=True)]
    return ("\n".join(lines) + "\n").encode("utf-8") + payload


def decode_checkpoint(data: bytes, source: str = "<checkpoint>") -> Checkpoint:
    parts = data.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != MAGIC.encode("utf-8"):
        raise CheckpointIntegrityError(f"{source}: not a deskrl checkpoint (bad magic)")
    try:
        header = json.loads(parts[1])
        manifest = json.loads(parts[2])
    except json.JSONDecodeError as e:
        raise CheckpointIntegrityError(f"{source}: unreadable checkpoint header") from e
    if header.get("format_version") != FORMAT_VERSION:
        raise CompatibilityError(
            f"{source}: checkpoint format version {header.get('format_version')} is not supported (expected {FORMAT_VERSION})"
        )
    payload = parts[3]
    if len(payload) != header["payload_bytes"]:
        raise CheckpointIntegrityError(
            f"{source}: payload has {len(payload)} bytes, header declares {header['payload_bytes']} (partial write?)"
        )
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise CheckpointIntegrityError(f"{source}: payload checksum mismatch")

    flat = np.frombuffer(payload, dtype=DTYPE)
    state: dict[str, list[np.ndarray]] = {}
    offset = 0
    for name in sorted(manifest["shapes"]):
        arrays = []
        for shape in manifest["shapes"][name]:
            size = int(np.prod(shape, dtype=np.int64))
            arrays.append(flat[offset : offset + size].reshape(shape).astype(np.float64))
            offset += size
        state[name] = arrays
    if offset != len(flat):
        raise CheckpointIntegrityError(f"{source}: payload size does not match the declared shapes")
    return Checkpoint(header, manifest, state)


def save_checkpoint(
    target: RunDir | str | Path, agent: Agent, step: int, obs_stats: NormalizerStats | None = None
) -> Path:
    """Write `agent` at global `step`; `target` is a run dir or an explicit file path.

    The file is written next to its destination and renamed into place, so
    readers never observe a half-written checkpoint.
    """
    path = target.checkpoint_path(step) if isinstance(target, RunDir) else Path(target)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_checkpoint(agent, step, obs_stats=obs_stats))
    os.replace(tmp, path)
    logger.info(f"Saved checkpoint {path} (step {step})")
    return path


def read_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    return decode_checkpoint(path.read_bytes(), str(path))


def _env_spec(data: dict[str, Any]) -> EnvSpec:
    data = dict(data)
    data["action_low"] = tuple(data.get("action_low", ()))
    data["action_high"] = tuple(data.get("action_high", ()))
    return EnvSpec(**data)


def restore(agent: Agent, checkpoint: Checkpoint, source: str = "<checkpoint>") -> Agent:
    if checkpoint.agent_name != agent.name:
        raise CompatibilityError(f"{source}: written by agent '{checkpoint.agent_name}', cannot load into '{agent.name}'")
    try:
        agent.load_state_dict(checkpoint.state)
    except DimensionError as e:
        raise CompatibilityError(f"{source}: parameter shapes do not match agent '{agent.name}': {e}") from e
    agent.set_rng_states(checkpoint.manifest["rng"])
    return agent


def load_checkpoint(path: str | Path, agent: Agent | None = None) -> Agent:
    """Restore parameters and RNG states into `agent`, or rebuild the agent from the checkpoint."""
    checkpoint = read_checkpoint(path)
    if agent is None:
        config = checkpoint.manifest["config"]
        agent = build_agent(
            config["agent"],
            _env_spec(checkpoint.manifest["env_spec"]),
            config["optim"],
            run_step=config["run_step"],
            seed=config["seed"],
            actor_id=config["actor_id"],
        )
    restore(agent, checkpoint, str(path))
    logger.info(f"Loaded checkpoint {path} ({checkpoint.agent_name}, step {checkpoint.step})")
    return agent
