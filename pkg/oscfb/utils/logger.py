import sys
import logging
from typing import Optional

from oscfb.utils.config import settings


_LEVELS = {
    "debug": logging.DEBUG,
    "info": logging.INFO,
    "warning": logging.WARNING,
    "error": logging.ERROR,
}


def _get_log_level(level: Optional[str]):
    if level is None:
        return level
    return _LEVELS.get(level.lower(), logging.INFO)


def setup_logs(logger):
    """
    Configure and return a logger with console and optional file handlers.

    The console handler writes to stderr; stdout is reserved for command output.
    """
    cli_level = _get_log_level(settings.LOG_LEVEL)
    log_file = settings.LOG_FILE
    file_level = _get_log_level(settings.LOG_FILE_LEVEL) or cli_level

    formatter = logging.Formatter("%(asctime)s : [%(levelname)s] %(message)s")

    logger.setLevel(min(cli_level, file_level) if log_file else cli_level)
    logger.propagate = False

    sh = logging.StreamHandler(sys.stderr)
    sh.setLevel(cli_level)
    sh.setFormatter(formatter)
    logger.addHandler(sh)

    if log_file:
        fh = logging.FileHandler(log_file, mode="w")
        fh.setLevel(file_level)
        fh.setFormatter(formatter)
        logger.addHandler(fh)

    return logger


# Create and configure the application-level logger
logger = logging.getLogger("oscfb")
if not logger.handlers:
    setup_logs(logger)
