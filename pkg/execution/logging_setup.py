"""
Logging configuration
Sinks are configured once by the entry point; library modules only call `logger`
"""
import sys
from typing import Optional

from loguru import logger

from execution.config import get_log_level, settings


def configure_logging(level: Optional[str] = None, log_file: Optional[str] = None) -> None:
    """
    Configure loguru sinks

    Args:
        level: stderr level (defaults to SSDU_LOG_LEVEL)
        log_file: rotating file sink path (defaults to settings.log_file; empty disables)
    """
    level = (level or get_log_level()).upper()
    log_file = settings.log_file if log_file is None else log_file

    logger.remove()
    logger.add(sys.stderr, level=level)
    if log_file:
        logger.add(log_file, rotation=settings.log_rotation, level="INFO")
