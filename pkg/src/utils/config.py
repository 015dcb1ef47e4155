"""Application Configuration"""

from pydantic_settings import BaseSettings, SettingsConfigDict
from functools import lru_cache


class Settings(BaseSettings):
    """Application settings"""

    model_config = SettingsConfigDict(env_prefix="PFML_", env_file=".env")

    LOG_LEVEL: str = "INFO"

    # Sensing
    MISSING_FILL_DBM: float = -100.0
    AUDIBILITY_DBM: float = -95.0
    WIFI_RATE_HZ: float = 3.0
    GRAVITY_MPS2: float = 9.81
    MAX_WALK_SPEED_MPS: float = 1.5

    # Ranging
    LOS_THRESHOLD_M: float = 5.0

    # Landmark detection
    KSTAR_BLEND: float = 30.0
    KNN_K: int = 3
    CV_FOLDS: int = 10

    DEFAULT_SEED: int = 42


@lru_cache()
def get_settings() -> Settings:
    return Settings()


settings = get_settings()
