from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    LOG_LEVEL: str = "INFO"
    LOG_DIR: str = "logs"
    LOG_TO_FILE: bool = True
    OUTPUT_DIR: str = "results"
    DEFAULT_SEED: int = 0
    SWEEP_WORKERS: int = 1
    DIVERGENCE_THRESHOLD: float = 1e12
    GAD_LOG_EVERY: int = 100

    model_config = SettingsConfigDict(env_file=".env", extra="ignore")


settings = Settings()
