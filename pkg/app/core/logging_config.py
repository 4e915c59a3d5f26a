import logging.config
from typing import Optional

from app.core.config import settings


def setup_logging(level: Optional[str] = None) -> None:
    LOGGING_CONFIG = {
        "version": 1,
        "disable_existing_loggers": False,
        "formatters": {
            "default": {
                "format": "%(asctime)s - %(name)s - %(levelname)s - %(message)s",
            },
        },
        "handlers": {
            "console": {
                "class": "logging.StreamHandler",
                "formatter": "default",
                "stream": "ext://sys.stderr",
            },
        },
        "root": {
            "level": (level or settings.LOG_LEVEL).upper(),
            "handlers": ["console"],
        },
    }
    logging.config.dictConfig(LOGGING_CONFIG)
