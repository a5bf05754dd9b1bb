import logging
import os
from typing import Optional

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"
LEVELS = {
    "error": logging.ERROR,
    "warn": logging.WARNING,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}
DEFAULT_LEVEL = "warn"

logger = logging.getLogger("fmo")


def configure_logging(level: Optional[str] = None) -> logging.Logger:
    """Attach handlers to the "fmo" logger.

    The level comes from the argument, else FMO_LOG (error|warn|info|debug),
    else warn. FMO_LOG_FILE adds a file handler next to stderr.
    Calling it again replaces the handlers.
    """
    requested = (level or os.environ.get("FMO_LOG") or DEFAULT_LEVEL).strip().lower()
    invalid = requested not in LEVELS
    logger.setLevel(LEVELS.get(requested, LEVELS[DEFAULT_LEVEL]))

    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()

    formatter = logging.Formatter(LOG_FORMAT)
    stream = logging.StreamHandler()
    stream.setFormatter(formatter)
    logger.addHandler(stream)

    log_file = os.environ.get("FMO_LOG_FILE")
    if log_file:
        directory = os.path.dirname(log_file)
        if directory:
            os.makedirs(directory, exist_ok=True)
        file_handler = logging.FileHandler(log_file)
        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)

    if invalid:
        logger.warning("unknown log level %r, using %s", requested, DEFAULT_LEVEL)
    return logger
