"""
Graybox NLP - Configuration
Centralized settings management with environment variable support
"""

import logging
from functools import lru_cache
from typing import Optional

from pydantic import Field
from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    """Application settings loaded from environment variables."""

    # Solver defaults
    tol: float = Field(default=1e-6, alias="GRAYBOX_TOL")
    max_iter: int = Field(default=3000, alias="GRAYBOX_MAX_ITER")
    time_limit_s: Optional[float] = Field(default=None, alias="GRAYBOX_TIME_LIMIT")

    # Problem defaults
    confidence: float = Field(default=0.6, alias="GRAYBOX_CONFIDENCE")
    frequency_floor: float = Field(default=59.4, alias="GRAYBOX_FREQUENCY_FLOOR")

    # Bench
    bench_workers: int = Field(default=1, alias="GRAYBOX_BENCH_WORKERS")

    # Logging
    log_level: str = Field(default="INFO", alias="GRAYBOX_LOG_LEVEL")

    @property
    def log_level_value(self) -> int:
        """Resolve the configured level name to a logging constant."""
        level = logging.getLevelName(self.log_level.upper())
        return level if isinstance(level, int) else logging.INFO

    class Config:
        env_file = ".env"
        env_file_encoding = "utf-8"
        extra = "ignore"


@lru_cache
def get_settings() -> Settings:
    """Get cached settings instance."""
    return Settings()
