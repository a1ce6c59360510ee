from functools import lru_cache
from pathlib import Path
from typing import Literal, Optional

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict

from dsj_toolkit import __version__


class Settings(BaseSettings):
    """Process-level settings read from the environment or a .env file."""

    model_config = SettingsConfigDict(
        env_prefix='DSJ_',
        env_file='.env',
        env_file_encoding='utf-8',
        case_sensitive=True,
        extra='forbid',
    )

    # Application Configuration
    APP_NAME: str = Field(default='dsj-toolkit', description='Tool name')
    APP_VERSION: str = Field(
        default=__version__, description='Tool version'
    )
    ENVIRONMENT: Literal['development', 'testing', 'production'] = Field(
        default='development', description='Runtime environment'
    )
    LOG_LEVEL: Literal['DEBUG', 'INFO', 'WARNING', 'ERROR'] = Field(
        default='INFO', description='Log level for stderr diagnostics'
    )

    # Paths
    CONFIG_PATH: Optional[Path] = Field(
        default=None,
        description='Design configuration file; the shipped one if unset',
    )
    OUTPUT_DIR: Path = Field(
        default=Path('results'), description='Default output directory'
    )

    # Numerics
    ASSUMPTION_THRESHOLD: float = Field(
        default=0.05,
        description='Largest admissible wrapping-rate error',
        gt=0,
        lt=1,
    )
    FIXED_POINT_DAMPING: float = Field(
        default=0.5,
        description='Relaxation factor of the grasp force iteration',
        gt=0,
        le=1,
    )
    FIXED_POINT_TOLERANCE: float = Field(
        default=1e-8,
        description='Relative tolerance of the grasp force iteration',
        gt=0,
        lt=1,
    )
    FIXED_POINT_MAX_ITER: int = Field(
        default=200,
        description='Iteration cap of the grasp force iteration',
        ge=1,
        le=100_000,
    )

    @property
    def is_development(self) -> bool:
        """Check if running in development environment."""
        return self.ENVIRONMENT == 'development'

    @property
    def is_testing(self) -> bool:
        """Check if running in testing environment."""
        return self.ENVIRONMENT == 'testing'


@lru_cache
def get_settings() -> Settings:
    """Get cached settings instance."""
    return Settings()
