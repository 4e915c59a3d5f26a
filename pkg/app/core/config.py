from pydantic_settings import BaseSettings, SettingsConfigDict
from pydantic import field_validator


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding='utf-8',
        env_prefix="MPDAE_",
        extra='ignore'
    )

    # --- Rank decisions (1-fullness) ---
    RANK_TOL: float = 1e-10
    FRAGILE_BAND_LOW: float = 1e-12
    FRAGILE_BAND_HIGH: float = 1e-8

    # --- Degeneracy guards for the coupling closure ---
    DEGENERACY_TOL: float = 1e-12
    CONSISTENCY_TOL: float = 1e-8

    # --- Per-line constraint Newton ---
    CONSTRAINT_NEWTON_TOL: float = 1e-12
    CONSTRAINT_NEWTON_MAX_ITER: int = 50

    # --- Periodic seed transient ---
    SEED_METHOD: str = "LSODA"
    SEED_RTOL: float = 1e-10
    SEED_ATOL: float = 1e-12
    SEED_PERIOD_TOL: float = 1e-6
    SEED_MAX_CHUNKS: int = 400
    SEED_PERIODS_AVERAGED: int = 5

    # --- Time integration ---
    MIN_RCOND: float = 1e-16

    # --- Output ---
    LOG_LEVEL: str = "INFO"
    RESULTS_DIR: str = "results"

    @field_validator("RANK_TOL", "DEGENERACY_TOL", "CONSISTENCY_TOL", "CONSTRAINT_NEWTON_TOL", "SEED_RTOL", "SEED_ATOL")
    @classmethod
    def must_be_positive(cls, v: float) -> float:
        if v <= 0:
            raise ValueError("tolerances must be positive")
        return v

settings: Settings = Settings()
