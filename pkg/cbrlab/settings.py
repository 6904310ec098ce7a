import dataclasses
import os


def _flag(name: str, default: str) -> bool:
    return os.getenv(name, default).strip().lower() in ("1", "true", "yes", "on")


@dataclasses.dataclass
class Settings:
    DEBUG_MODE: bool = _flag("CBRLAB_DEBUG_MODE", "false")
    LOG_LEVEL: str = os.getenv("CBRLAB_LOG_LEVEL", "INFO")
    CHUNK_SIZE: int = int(os.getenv("CBRLAB_CHUNK_SIZE", 5000))
    DEFAULT_SEEDS: int = int(os.getenv("CBRLAB_DEFAULT_SEEDS", 10))
    DEFAULT_WORKERS: int = int(os.getenv("CBRLAB_WORKERS", 1))
    DEFAULT_EXPORT_FORMAT: str = os.getenv("CBRLAB_DEFAULT_EXPORT_FORMAT", "csv")
    POWER_ITERATION_MAX_ITER: int = int(
        os.getenv("CBRLAB_POWER_ITERATION_MAX_ITER", 10_000)
    )
    POWER_ITERATION_TOL: float = float(os.getenv("CBRLAB_POWER_ITERATION_TOL", 1e-10))
    CONFIG_ENV_PREFIX: str = os.getenv("CBRLAB_CONFIG_ENV_PREFIX", "CBRLAB_CFG__")
