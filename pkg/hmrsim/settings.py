from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_file=".env", extra="ignore")

    DATABASE_URL: str = "sqlite:///./hmrsim.db"
    OUTPUT_DIR: str = "./out"
    LOG_LEVEL: str = "INFO"

    HANG_FACTOR: int = 10
    CAMPAIGN_WORKERS: int = 4
    MAX_CYCLES: int = 5_000_000


settings = Settings()
