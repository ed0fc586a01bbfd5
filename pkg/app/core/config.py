"""
Configuration module for the Clique Memory Engine.
Manages environment variables and engine defaults.
"""
from typing import Literal, Optional
from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict
from functools import lru_cache


class Settings(BaseSettings):
    """Application settings loaded from environment variables."""

    model_config = SettingsConfigDict(
        env_prefix="CLIQUE_",
        env_file=".env",
        case_sensitive=False,
        extra="ignore",
    )

    # API Configuration
    app_name: str = "Clique Memory Engine"
    app_version: str = "1.0.0"
    debug: bool = False
    log_level: str = "INFO"

    # Parallelism
    workers: int = Field(default=1, ge=1)  # CLIQUE_WORKERS
    batch_size: int = Field(default=1024, ge=1)  # probes per worker chunk

    # Retrieval defaults
    default_gamma: int = Field(default=1, ge=0)
    default_max_iters: int = Field(default=20, ge=1)

    # Carrier emulation
    default_theta: Optional[int] = Field(default=None, ge=2)  # None -> L + 1
    fixed_width_bits: Optional[int] = Field(default=None, ge=1)  # None -> unbounded

    # Benchmark
    success_counting: Literal["unique", "random_choice"] = "unique"
    repetitions: int = Field(default=5, ge=1)

    # Weight file served by the HTTP surface
    weights_path: Optional[str] = None


@lru_cache()
def get_settings() -> Settings:
    """Get cached settings instance."""
    return Settings()
