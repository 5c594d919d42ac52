from pathlib import Path
from typing import Optional
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Application configuration settings."""

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=True,
        extra="ignore",
    )

    # Project Information
    PROJECT_NAME: str = "oscfb"
    VERSION: str = "0.1.0"

    # Logging Configuration
    LOG_LEVEL: str = "info"
    LOG_FILE: Optional[str] = None
    LOG_FILE_LEVEL: Optional[str] = None

    # Parallelism (None -> hardware parallelism)
    OSC_THREADS: Optional[int] = None

    # Simulation
    SIM_BLOCK_SIZE: int = 1024
    DIVERGENCE_RATIO: float = 1e8
    INSTABILITY_RATIO: float = 100.0
    # Largest log-energy rise over the second half of a numeric classification run
    TAIL_GROWTH_LIMIT: float = 0.7

    # Stability classification
    MARGINAL_TOLERANCE: float = 1e-10
    BASELINE: str = "system"

    # Output
    OUTPUT_DIR: Path = Path("./runs")
    SHOW_PROGRESS: bool = True


settings = Settings()
