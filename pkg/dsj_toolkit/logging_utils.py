"""Logging setup for command-line runs."""

import logging

from rich.console import Console
from rich.logging import RichHandler

LOGGER_NAME = 'dsj_toolkit'


def configure_logging(level: str = 'INFO') -> logging.Logger:
    """Route package logs to stderr through rich.

    Stdout is left untouched so it can carry only the manifest path.

    Args:
        level: Name of the log level

    Returns:
        The package root logger
    """
    logger = logging.getLogger(LOGGER_NAME)
    logger.setLevel(level.upper())
    for handler in list(logger.handlers):
        logger.removeHandler(handler)

    handler = RichHandler(
        console=Console(stderr=True, highlight=False),
        show_path=False,
        rich_tracebacks=False,
    )
    handler.setFormatter(logging.Formatter('%(message)s'))
    logger.addHandler(handler)
    return logger
