"""
Logging setup
Rich console handler plus an optional per-run log file
"""

import logging
import os
from typing import Optional

from rich.console import Console
from rich.logging import RichHandler

PACKAGE_LOGGER = "src.bcgan"
LOG_FILE_NAME = "bcgan.log"

console = Console(stderr=True)


def configure_logging(verbose: bool = False, log_file: Optional[str] = None) -> logging.Logger:
    """
    Attach handlers to the package logger

    Args:
        verbose: DEBUG instead of INFO
        log_file: Also write timestamped records to this file

    Returns:
        The package logger
    """
    logger = logging.getLogger(PACKAGE_LOGGER)
    level = logging.DEBUG if verbose else logging.INFO
    logger.setLevel(level)
    logger.propagate = False
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()

    rich_handler = RichHandler(console=console, show_time=False, show_path=False, markup=False)
    rich_handler.setLevel(level)
    logger.addHandler(rich_handler)

    if log_file is not None:
        directory = os.path.dirname(log_file)
        if directory:
            os.makedirs(directory, exist_ok=True)
        file_handler = logging.FileHandler(log_file, mode="a", encoding="utf-8")
        file_handler.setFormatter(logging.Formatter("%(asctime)s - %(name)s - %(levelname)s - %(message)s"))
        file_handler.setLevel(logging.DEBUG)
        logger.addHandler(file_handler)
    return logger
