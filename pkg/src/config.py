from pydantic import Field
from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    # Parallelism
    BRIDGECRAFT_THREADS: int = Field(1, env="BRIDGECRAFT_THREADS")  # caps rollout threads and compare workers
    BRIDGECRAFT_REPRODUCIBLE: bool = Field(True, env="BRIDGECRAFT_REPRODUCIBLE")

    # Logging
    BRIDGECRAFT_LOG_LEVEL: str = Field("INFO", env="BRIDGECRAFT_LOG_LEVEL")

    # Output
    BRIDGECRAFT_OUTPUT_DIR: str = Field("runs", env="BRIDGECRAFT_OUTPUT_DIR")
    BRIDGECRAFT_CHECKPOINT_EVERY: int = Field(10, env="BRIDGECRAFT_CHECKPOINT_EVERY")  # evaluations between checkpoints

    # Bundled logistic-regression datasets
    BRIDGECRAFT_DATA_DIR: str = Field("src/data/datasets", env="BRIDGECRAFT_DATA_DIR")

    model_config = {
        "env_file": ".env",
        "env_file_encoding": "utf-8",
        "extra": "ignore",
    }

settings = Settings()
