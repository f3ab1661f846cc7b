"""Environment settings and fit-config defaults from YAML."""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Dict, Optional

import yaml
from pydantic_settings import BaseSettings, SettingsConfigDict

from App.calibration.calibrators import FitConfig, make_config
from App.calibration.errors import ConfigError

logger = logging.getLogger(__name__)


class Settings(BaseSettings):
    """Only ``MULTICAL_CONFIG`` is read from the environment (or ``.env``)."""

    model_config = SettingsConfigDict(env_prefix="MULTICAL_", env_file=".env", extra="ignore")

    config: Optional[Path] = None


def load_config_file(path: Optional[Path]) -> Dict[str, Any]:
    if path is None:
        return {}
    try:
        with open(path) as f:
            raw = yaml.safe_load(f) or {}
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must hold a mapping")
    unknown = set(raw) - set(FitConfig.model_fields)
    if unknown:
        raise ConfigError(f"unknown keys in config file {path}: {sorted(unknown)}")
    logger.info(f"Loaded fit defaults from {path}")
    return raw


def resolve_fit_config(config_path: Optional[Path] = None, **flags: Any) -> FitConfig:
    """Command-line flags override the config file, which overrides built-in defaults."""
    path = config_path if config_path is not None else Settings().config
    values = load_config_file(path)
    values.update({k: v for k, v in flags.items() if v is not None})
    if "alpha" not in values:
        values["alpha"] = 0.1
    return make_config(**values)
