"""
Configuration module for the feature learning workbench.
Handles environment-specific settings and validation.
"""
from functools import lru_cache
from pathlib import Path
from typing import Optional

import structlog
from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

logger = structlog.get_logger(__name__)


class Settings(BaseSettings):
    """Process-wide settings read from the environment or a .env file."""

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
        populate_by_name=True,
    )

    # Application Settings
    environment: str = Field("development", alias="ENVIRONMENT")
    log_level: str = Field("INFO", alias="LOG_LEVEL")
    log_format: str = Field("json", alias="LOG_FORMAT")

    # Storage locations
    data_root: Path = Field(Path("data"), alias="WORKBENCH_DATA_ROOT")
    output_dir: Path = Field(Path("runs"), alias="WORKBENCH_OUTPUT_DIR")
    cache_dir: Optional[Path] = Field(None, alias="WORKBENCH_CACHE_DIR")

    # Observability
    metrics_enabled: bool = Field(True, alias="METRICS_ENABLED")
    metrics_textfile: Optional[Path] = Field(None, alias="METRICS_TEXTFILE")

    # Performance Settings
    n_jobs: int = Field(1, ge=1, alias="N_JOBS")

    @field_validator("log_level")
    @classmethod
    def validate_log_level(cls, v: str) -> str:
        """Validate log level."""
        valid_levels = ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]
        if v.upper() not in valid_levels:
            raise ValueError(f"Invalid log level. Must be one of: {valid_levels}")
        return v.upper()

    @field_validator("log_format")
    @classmethod
    def validate_log_format(cls, v: str) -> str:
        """Validate log renderer name."""
        valid_formats = ["json", "console"]
        if v.lower() not in valid_formats:
            raise ValueError(f"Invalid log format. Must be one of: {valid_formats}")
        return v.lower()

    @field_validator("environment")
    @classmethod
    def validate_environment(cls, v: str) -> str:
        """Validate environment."""
        valid_environments = ["development", "production", "test"]
        if v.lower() not in valid_environments:
            raise ValueError(f"Invalid environment. Must be one of: {valid_environments}")
        return v.lower()

    @property
    def resolved_cache_dir(self) -> Path:
        """Cache directory, defaulting to a folder under the output directory."""
        return self.cache_dir if self.cache_dir is not None else self.output_dir / "cache"


@lru_cache()
def get_settings() -> Settings:
    """Get cached settings instance."""
    try:
        settings = Settings()
        logger.debug("Configuration loaded",
                     environment=settings.environment,
                     data_root=str(settings.data_root))
        return settings
    except Exception as e:
        logger.error("Failed to load configuration", error=str(e))
        raise
