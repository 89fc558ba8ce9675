# --------------------------------------------------------------------------------------
# Part of the mdstore project.
#
# Package logging setup, shared by the library and the command-line interface.
# --------------------------------------------------------------------------------------

"""Embeddable multidimensional data store for fixed-schema sensor records.

Two loggers are configured on import. The ``mdstore`` logger carries library diagnostics
at the level named by ``MDSTORE_LOG_LEVEL``; the ``cli_logger`` prints user-facing output
of the command-line interface. Neither propagates to the root logger.
"""

import logging
import os
import sys

LOG_LEVEL_ENV = "MDSTORE_LOG_LEVEL"
LIBRARY_FORMAT = "[%(levelname)s] %(name)s:%(lineno)d - %(message)s"
_LEVEL_NAMES = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


class CLIFormatter(logging.Formatter):
    """Plain messages for INFO and DEBUG, tagged ones for warnings and errors."""

    def format(self, record: logging.LogRecord) -> str:
        msg = record.getMessage()
        if record.levelno >= logging.ERROR:
            return f"[ERROR]: {msg}"
        if record.levelno == logging.WARNING:
            return f"[WARNING]: {msg}"
        return msg


def _stdout_logger(name: str, level: int, formatter: logging.Formatter) -> logging.Logger:
    log = logging.getLogger(name)
    log.setLevel(level)
    if not log.hasHandlers():
        stream = logging.StreamHandler(sys.stdout)
        stream.setFormatter(formatter)
        log.addHandler(stream)
    log.propagate = False
    return log


def _configured_level() -> tuple[int, str | None]:
    """Resolve the library level, with a warning text when the variable is unusable."""
    requested = os.getenv(LOG_LEVEL_ENV, "INFO")
    if requested.upper() in _LEVEL_NAMES:
        return getattr(logging, requested.upper()), None
    return logging.INFO, (
        f"{LOG_LEVEL_ENV} was set to '{requested}', which is not recognized. "
        f"Supported levels are {', '.join(_LEVEL_NAMES)}."
    )


_level, _problem = _configured_level()
logger = _stdout_logger(__name__, _level, logging.Formatter(LIBRARY_FORMAT))
if _problem is not None:
    logger.warning(_problem)

plain_logger = _stdout_logger("cli_logger", logging.INFO, CLIFormatter())
