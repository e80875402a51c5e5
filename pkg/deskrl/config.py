"""Process-level settings for deskrl."""

from functools import lru_cache
from pathlib import Path

from pydantic_settings import BaseSettings, SettingsConfigDict

# Project root directory
PROJECT_ROOT = Path(__file__).parent.parent


class Settings(BaseSettings):
    """Settings loaded from DESKRL_* environment variables or a .env file.

    Per-run hyperparameters live in the configuration documents under
    `config_root`; this class only holds what is shared by every run.
    """

    model_config = SettingsConfigDict(
        env_prefix="DESKRL_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    # Paths
    project_root: Path = PROJECT_ROOT
    config_root: Path = PROJECT_ROOT / "config"
    logs_root: Path = PROJECT_ROOT / "logs"
    config_extension: str = "yaml"

    # Logging
    log_level: str = "INFO"
    log_format: str = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

    # Defaults applied when the command line or config leaves them out
    default_config_ref: str = "config.dqn.cartpole"
    seed: int = 0


@lru_cache()
def get_settings() -> Settings:
    """Get cached settings instance."""
    return Settings()
