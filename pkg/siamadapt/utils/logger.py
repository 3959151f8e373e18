"""
Logging Configuration
Centralized logging setup for SiamAdapt
"""

import logging
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Optional

from pythonjsonlogger import jsonlogger

PACKAGE_LOGGER = 'siamadapt'
JSON_FORMAT = '%(asctime)s %(levelname)s %(name)s %(message)s'


def setup_logging(settings, level: Optional[str] = None) -> logging.Logger:
    """
    Configure the package logger

    Args:
        settings: Config class (or instance) exposing LOG_LEVEL, LOG_FORMAT, LOG_FILE,
            LOG_MAX_BYTES, LOG_BACKUP_COUNT and TESTING
        level: Optional level name overriding settings.LOG_LEVEL

    Returns:
        The configured package logger
    """
    log_level = getattr(logging, (level or settings.LOG_LEVEL).upper(), logging.INFO)
    log_format = settings.LOG_FORMAT

    # Configure the package logger ONLY (not root logger)
    logger = logging.getLogger(PACKAGE_LOGGER)
    logger.setLevel(log_level)
    logger.propagate = False
    logger.handlers.clear()

    console_handler = logging.StreamHandler()
    console_handler.setLevel(log_level)
    console_handler.setFormatter(logging.Formatter(log_format))
    logger.addHandler(console_handler)

    # JSON records to a rotating file, skipped under tests
    if not settings.TESTING:
        log_file = Path(settings.LOG_FILE or 'logs/siamadapt.log')
        log_file.parent.mkdir(parents=True, exist_ok=True)

        file_handler = RotatingFileHandler(
            log_file,
            maxBytes=settings.LOG_MAX_BYTES,
            backupCount=settings.LOG_BACKUP_COUNT
        )
        file_handler.setLevel(log_level)
        file_handler.setFormatter(jsonlogger.JsonFormatter(JSON_FORMAT))
        logger.addHandler(file_handler)

    logger.debug("Logging configured successfully")
    return logger
