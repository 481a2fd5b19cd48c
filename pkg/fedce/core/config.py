import logging
import os
from pathlib import Path
from typing import Any, Dict, Union

import yaml
from pydantic import Field, ValidationError, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from fedce.exceptions.errors import ConfigError
from fedce.models.experiment import ExperimentConfig

logger = logging.getLogger(__name__)

CONFIG_DIR = Path(__file__).parent.parent.parent / "config"


def load_yaml_config(env: str | None = None) -> Dict[str, Any]:
    """Load runtime settings from YAML file based on environment."""
    # Get environment from environment variable, default to 'dev'
    env = env or os.getenv("FEDCE_ENV", "dev")
    config_path = CONFIG_DIR / f"app_config.{env}.yaml"

    if not config_path.exists():
        raise FileNotFoundError(f"Configuration file not found at {config_path}")

    try:
        with open(config_path, "r", encoding="utf-8") as f:
            return yaml.safe_load(f) or {}
    except Exception as e:
        logger.error(f"Failed to load config file {config_path}: {e}")
        raise


# Load YAML configuration
try:
    yaml_config = load_yaml_config()
except Exception as e:
    logger.warning(f"Failed to load YAML config, using defaults: {e}")
    yaml_config = {}


class Settings(BaseSettings):
    """Runtime settings with validation and environment variable support."""

    model_config = SettingsConfigDict(
        case_sensitive=True,
        env_prefix="FEDCE_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    # Environment
    ENV: str = Field(default="dev", description="Runtime environment (dev, prod)")

    # Project settings
    PROJECT_NAME: str = Field(
        default=yaml_config.get("project", {}).get("name", "FedCE Simulator"),
        description="Project name",
    )
    VERSION: str = Field(
        default=yaml_config.get("project", {}).get("version", "1.0.0"),
        description="Simulator version",
    )

    # Execution settings
    THREADS: int = Field(
        default=yaml_config.get("execution", {}).get("threads", 1),
        ge=1,
        le=256,
        description="Maximum worker threads for clients and sub-experiments (FEDCE_THREADS)",
    )
    SHAPLEY_MAX_CLIENTS: int = Field(
        default=yaml_config.get("execution", {}).get("shapley_max_clients", 8),
        ge=2,
        le=8,
        description="Largest federation accepted by exact Shapley enumeration",
    )
    UTILITY_CACHE_SIZE: int = Field(
        default=yaml_config.get("execution", {}).get("utility_cache_size", 512),
        ge=1,
        description="Number of coalition utilities memoized per valuation",
    )

    # Logging settings
    LOG_LEVEL: str = Field(
        default=yaml_config.get("logging", {}).get("level", "INFO"),
        pattern="^(DEBUG|INFO|WARNING|ERROR|CRITICAL)$",
        description="Root log level",
    )
    LOG_FORMAT: str = Field(
        default=yaml_config.get("logging", {}).get("format", "console"),
        pattern="^(console|json)$",
        description="Log renderer: 'console' (human-readable) or 'json' (one object per line)",
    )

    # Artifact settings
    CSV_SIGNIFICANT_DIGITS: int = Field(
        default=yaml_config.get("artifacts", {}).get("csv_significant_digits", 12),
        ge=6,
        le=17,
        description="Significant digits for floats in CSV and JSON artifacts",
    )

    @field_validator("ENV")
    @classmethod
    def validate_env(cls, v: str) -> str:
        """Validate environment value."""
        if v not in ["dev", "prod"]:
            raise ValueError("ENV must be 'dev' or 'prod'")
        return v


settings = Settings()


def _format_validation_error(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        path = ".".join(str(p) for p in err["loc"]) or "<root>"
        parts.append(f"{path}: {err['msg']}")
    return "; ".join(parts)


def parse_experiment_config(data: Dict[str, Any], source: str = "<dict>") -> ExperimentConfig:
    """Validate a raw mapping into an ExperimentConfig, raising ConfigError with key paths."""
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"{source}: {_format_validation_error(e)}") from e


def load_experiment_config(path: Union[str, Path]) -> ExperimentConfig:
    """
    Load and validate an experiment config file.

    Args:
        path: YAML file with the experiment sections

    Returns:
        ExperimentConfig: validated config with defaults populated

    Raises:
        ConfigError: missing file, YAML syntax error, or schema violation
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Configuration file not found at {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: invalid YAML: {e}") from e
    return parse_experiment_config(data or {}, source=str(path))


def dump_experiment_config(config: ExperimentConfig) -> str:
    """Render the canonical YAML form of a config (sorted keys, defaults materialized)."""
    data = config.model_dump(mode="json")
    return yaml.safe_dump(data, sort_keys=True, default_flow_style=False, allow_unicode=True)
