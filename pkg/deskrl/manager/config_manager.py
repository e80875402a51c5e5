"""Configuration documents: loading, validation, references and command-line overrides.

A document is a YAML mapping with exactly four tables:

    env:   {name: cartpole, ...}
    agent: {name: dqn, gamma: 0.99, ...}
    optim: {name: adam, lr: 0.0001, ...}
    train: {training: true, load_path: null, run_step: 100000, ...}

Keys beyond the required ones are preserved and handed to the owning
component.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import yaml
from pydantic import BaseModel, ConfigDict, NonNegativeInt, PositiveInt, ValidationError

from deskrl.config import Settings, get_settings
from deskrl.core.agent import agent_class
from deskrl.core.env import env_class
from deskrl.core.optimizer import optimizer_names
from deskrl.errors import ConfigFileError, ConfigSchemaError, ConfigTypeError, RegistryError

logger = logging.getLogger(__name__)

TABLES = ("env", "agent", "optim", "train")
TRUE_WORDS = {"true", "1", "yes", "on"}
FALSE_WORDS = {"false", "0", "no", "off"}
NULL_WORDS = {"none", "null", "~"}


class _Table(BaseModel):
    model_config = ConfigDict(extra="allow")


class EnvTable(_Table):
    name: str


class AgentTable(_Table):
    name: str


class OptimTable(_Table):
    name: str = "adam"


class TrainTable(_Table):
    training: bool
    load_path: str | None
    run_step: PositiveInt
    print_period: PositiveInt
    # 0 keeps only the end-of-training checkpoint
    save_period: NonNegativeInt
    eval_iteration: PositiveInt
    update_period: PositiveInt
    num_workers: PositiveInt
    seed: int | None = None
    async_window: float = 0.1
    max_wall_time: float | None = None


class ConfigTree(BaseModel):
    """The four validated tables of a configuration document."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    env: EnvTable
    agent: AgentTable
    optim: OptimTable
    train: TrainTable

    def to_dict(self) -> dict[str, dict[str, Any]]:
        return {table: getattr(self, table).model_dump() for table in TABLES}

    @classmethod
    def from_dict(cls, data: Any, source: str = "<config>") -> "ConfigTree":
        if not isinstance(data, dict):
            raise ConfigSchemaError(f"{source}: expected a mapping of tables, got {type(data).__name__}")
        extra = sorted(set(data) - set(TABLES))
        if extra:
            raise ConfigSchemaError(f"{source}: unexpected top-level tables: {', '.join(extra)}")
        for table in TABLES:
            if table not in data:
                raise ConfigSchemaError(f"{source}: missing table '{table}'")
            if not isinstance(data[table], dict):
                raise ConfigSchemaError(f"{source}: table '{table}' must be a mapping")
        try:
            return cls(**data)
        except ValidationError as e:
            first = e.errors()[0]
            location = ".".join(str(p) for p in first["loc"])
            if first["type"] == "missing":
                raise ConfigSchemaError(f"{source}: missing required key '{location}'") from e
            raise ConfigTypeError(f"{source}: '{location}': {first['msg']}") from e

    def get(self, table: str, key: str, default: Any = None) -> Any:
        return self.to_dict()[table].get(key, default)


@dataclass(frozen=True)
class OverrideSpec:
    """A `table.key value` pair from the command line."""

    key_path: str
    raw_value: str

    def __post_init__(self):
        parts = self.key_path.split(".")
        if len(parts) != 2 or not all(parts):
            raise ConfigSchemaError(f"override '{self.key_path}' must have the form <table>.<key>")
        if parts[0] not in TABLES:
            raise ConfigSchemaError(f"override '{self.key_path}' names unknown table '{parts[0]}' (tables: {', '.join(TABLES)})")

    @property
    def table(self) -> str:
        return self.key_path.split(".")[0]

    @property
    def key(self) -> str:
        return self.key_path.split(".")[1]


def _coerce_bool(raw: str, key_path: str) -> bool:
    word = raw.strip().lower()
    if word in TRUE_WORDS:
        return True
    if word in FALSE_WORDS:
        return False
    raise ConfigTypeError(f"'{key_path}' expects bool, got '{raw}'")


def infer_value(raw: str) -> Any:
    """Type a value for a key the document does not have: int, then float, then bool, then string."""
    if raw.strip().lower() in NULL_WORDS:
        return None
    for cast in (int, float):
        try:
            return cast(raw)
        except ValueError:
            pass
    word = raw.strip().lower()
    if word in TRUE_WORDS - {"1"} or word in FALSE_WORDS - {"0"}:
        return word in TRUE_WORDS
    return raw


def coerce_value(raw: str, existing: Any, key_path: str) -> Any:
    """Convert `raw` to the type of `existing`; a null word always clears the key."""
    if existing is None or raw.strip().lower() in NULL_WORDS:
        return infer_value(raw)
    try:
        if isinstance(existing, bool):
            return _coerce_bool(raw, key_path)
        if isinstance(existing, int):
            return int(raw)
        if isinstance(existing, float):
            return float(raw)
        if isinstance(existing, list):
            value = yaml.safe_load(raw)
            if not isinstance(value, list):
                raise ValueError("not a list")
            return value
    except ValueError as e:
        raise ConfigTypeError(f"'{key_path}' expects {type(existing).__name__}, got '{raw}'") from e
    return raw


def apply_override(tree: ConfigTree, override: OverrideSpec) -> ConfigTree:
    data = tree.to_dict()
    table = data[override.table]
    if override.key in table:
        value = coerce_value(override.raw_value, table[override.key], override.key_path)
    else:
        value = infer_value(override.raw_value)
    logger.debug(f"Override {override.key_path} = {value!r}")
    table[override.key] = value
    return ConfigTree.from_dict(data, source=f"override {override.key_path}")


def apply_overrides(tree: ConfigTree, overrides: list[OverrideSpec]) -> ConfigTree:
    for override in overrides:
        tree = apply_override(tree, override)
    return tree


def validate_names(tree: ConfigTree) -> ConfigTree:
    """Check that agent, env and optimizer names resolve in their registries."""
    agent_class(tree.agent.name)
    env_class(tree.env.name)
    if tree.optim.name not in optimizer_names():
        raise RegistryError("optimizer", tree.optim.name, optimizer_names())
    return tree


def parse_config(text: str, source: str = "<config>") -> ConfigTree:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigSchemaError(f"{source}: not a valid YAML document: {e}") from e
    return validate_names(ConfigTree.from_dict(data, source))


def load_config(path: str | Path) -> ConfigTree:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as e:
        raise ConfigFileError(f"config file not found: {path}") from e
    except OSError as e:
        raise ConfigFileError(f"cannot read config file {path}: {e}") from e
    logger.debug(f"Loaded config {path}")
    return parse_config(text, str(path))


def dump_config(tree: ConfigTree) -> str:
    return yaml.safe_dump(tree.to_dict(), sort_keys=False)


def save_config(tree: ConfigTree, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(dump_config(tree), encoding="utf-8")
    return path


def resolve_config_ref(ref: str | None, settings: Settings | None = None) -> Path:
    """Map `config.<agent>.<env>` to `<config_root>/<agent>/<env>.<ext>`.

    A missing reference selects the default configuration.
    """
    settings = settings or get_settings()
    ref = ref or settings.default_config_ref
    parts = ref.split(".")
    if len(parts) != 3 or parts[0] != "config" or not all(parts):
        raise ConfigFileError(f"config reference '{ref}' must look like config.<agent>.<env> (without extension)")
    path = Path(settings.config_root) / parts[1] / f"{parts[2]}.{settings.config_extension}"
    if not path.is_file():
        raise ConfigFileError(f"config reference '{ref}' not found; searched {path}")
    return path


def config_refs(settings: Settings | None = None) -> list[str]:
    """References of every shipped configuration document."""
    settings = settings or get_settings()
    root = Path(settings.config_root)
    return sorted(
        f"config.{p.parent.name}.{p.stem}" for p in root.glob(f"*/*.{settings.config_extension}")
    )
