from functools import lru_cache
from pathlib import Path
from typing import Literal

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict

from hadamard.core.enums import GradMode


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        env_prefix="HADAMARD_",
        case_sensitive=False,
        extra="ignore",
    )

    app_env: Literal["development", "ci", "production"] = "development"
    log_level: str = "INFO"
    log_format: Literal["json", "console"] = "json"

    data_dir: Path = Field(default=Path("data"), description="Dataset directory")

    # dataset generation
    seed: int = Field(default=7, ge=0, lt=2**64)
    train_count: int = Field(default=10000, gt=0)
    val_count: int = Field(default=1000, gt=0)

    # training recipe
    init_seed: int = Field(default=1, ge=0, lt=2**64)
    shuffle_seed: int = Field(default=2, ge=0, lt=2**64)
    learning_rate: float = Field(default=1e-3, gt=0)
    batch_size: int = Field(default=32, gt=0)
    epochs: int = Field(default=20, gt=0)
    workers: int = Field(default=1, gt=0, description="Per-sample gradient processes")

    # explanations
    explain_mode: GradMode = GradMode.GUIDED

    # self-check
    gradcheck_step: float = Field(default=1e-5, gt=0)
    gradcheck_tolerance: float = Field(default=1e-4, gt=0)
    selfcheck_trials: int = Field(default=100, gt=0)


@lru_cache
def get_settings() -> Settings:
    return Settings()


settings = get_settings()
