"""
Application configuration using Pydantic Settings.
All settings can be overridden via environment variables (prefix POSTHOC_).
"""

from typing import List
from pydantic_settings import BaseSettings, SettingsConfigDict

CLI_METHODS = ("bootstrap", "bootstrap-stepdown", "simes", "ari", "fwer")
TEMPLATES = ("linear",)
LOG_FORMATS = ("json", "text")


class Settings(BaseSettings):
    """Application settings with environment variable support"""

    # === Application Info ===
    app_name: str = "Posthoc FDP"
    version: str = "1.0.0"
    debug: bool = False

    # === Calibration Defaults ===
    alpha: float = 0.1
    bootstraps: int = 1000
    method: str = "bootstrap-stepdown"
    template: str = "linear"
    bh_q: float = 0.05
    max_iterations: int = 100
    threads: int = 1
    # B * L * m_pts above which bootstrap fields are regenerated, not cached
    max_cached_cells: int = 50_000_000
    # per-k thresholds t_k(lambda) are listed in the report up to this K
    max_reported_thresholds: int = 100

    # === Simulation Defaults ===
    sim_reps: int = 500
    sim_bootstraps: int = 100

    # === API Configuration ===
    max_file_size: int = 10 * 1024 * 1024  # 10MB
    allowed_file_types: List[str] = [
        "text/csv",
        "text/plain",
        "application/vnd.ms-excel",
        "application/octet-stream",
    ]

    # === CORS Configuration ===
    cors_origins: List[str] = ["*"]

    # === Logging ===
    log_level: str = "INFO"
    log_format: str = "text"  # "json" or "text"

    model_config = SettingsConfigDict(
        env_prefix="POSTHOC_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore"
    )

    def validate_settings(self) -> None:
        """Validate critical settings on startup"""
        if not 0 < self.alpha < 1:
            raise ValueError(f"ALPHA must lie in (0, 1), got {self.alpha}")

        if not 0 < self.bh_q < 1:
            raise ValueError(f"BH_Q must lie in (0, 1), got {self.bh_q}")

        if self.bootstraps < 1 or self.sim_bootstraps < 1:
            raise ValueError("BOOTSTRAPS and SIM_BOOTSTRAPS must be at least 1")

        if self.threads < 1:
            raise ValueError(f"THREADS must be at least 1, got {self.threads}")

        if self.method not in CLI_METHODS:
            raise ValueError(
                f"METHOD '{self.method}' unknown. Choose one of: {', '.join(CLI_METHODS)}"
            )

        if self.template not in TEMPLATES:
            raise ValueError(f"TEMPLATE '{self.template}' unknown")

        if self.log_format not in LOG_FORMATS:
            raise ValueError(f"LOG_FORMAT must be 'json' or 'text', got '{self.log_format}'")

    @property
    def max_file_size_mb(self) -> float:
        """Get max file size in MB for display"""
        return self.max_file_size / (1024 * 1024)


# Create global settings instance
settings = Settings()

# Validate on import (fail fast)
try:
    settings.validate_settings()
except ValueError as e:
    import logging
    logging.error(f"Configuration error: {e}")
    raise
