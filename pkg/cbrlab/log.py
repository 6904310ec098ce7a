import logging
import sys
from typing import Optional

from cbrlab.settings import Settings

LOGGING_FORMATTER = (
    "[%(levelname)s] %(name)s %(asctime)s %(funcName)s:%(lineno)d - %(message)s"
)

_LEVELS = ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]


def get_logger(name: Optional[str] = None, level: Optional[str] = None) -> logging.Logger:
    """Returns Logger Instance with predefined formatting"""
    logger = logging.getLogger(name=name)
    if not logger.handlers:
        handler = logging.StreamHandler(sys.stdout)
        handler.setFormatter(logging.Formatter(LOGGING_FORMATTER))
        logger.addHandler(handler)
        logger.propagate = False
    level = level or Settings.LOG_LEVEL
    if not level or level.upper() not in _LEVELS:
        logger.warning(f"invalid logging level: {level}, setting logging level to `INFO`")
        level = "INFO"
    if Settings.DEBUG_MODE is False and level.upper() == "DEBUG":
        level = "INFO"
    logger.setLevel(level=level.upper())
    return logger


__all__ = ["get_logger"]
