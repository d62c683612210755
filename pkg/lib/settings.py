import logging

import sentry_sdk
from pydantic import field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

# numerical libraries are chatty on DEBUG
logging.getLogger("trimesh").setLevel(logging.WARNING)


class Settings(BaseSettings):
    """Process-level settings, read from the environment (``BMKN_`` prefix)."""

    model_config = SettingsConfigDict(env_prefix="BMKN_", env_nested_delimiter="__")

    name: str = "bimodal-mesh-codec"

    sentry_dsn: str = ""
    sentry_sample_rate: float = 1.0
    sentry_logs: bool = True

    log_level: str = "INFO"

    # default codec configuration file, used when the CLI gets no --config
    config_path: str = "config.yml"

    # thread pool size for the 8 mask candidates and sweep grid points
    workers: int = 1

    @field_validator("workers")
    def workers_positive(cls, v: int) -> int:
        if v < 1:
            raise ValueError("workers must be >= 1")
        return v


settings = Settings()

if settings.sentry_dsn:
    sentry_sdk.init(
        dsn=settings.sentry_dsn,
        send_default_pii=False,
        enable_logs=settings.sentry_logs,
        traces_sample_rate=settings.sentry_sample_rate,
    )

logging.basicConfig(
    level=settings.log_level,
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
)
