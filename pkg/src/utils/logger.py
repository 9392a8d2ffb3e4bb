"""
Logging configuration for the toolkit.

All module loggers hang under one package logger that owns a stderr console
handler and a UTF-8 file handler. stdout is left to the one-line run summary
printed by the CLI.
"""
import logging
import sys
from pathlib import Path

from src.config import CONSOLE_LOG_LEVEL, LOG_FILE, LOG_FORMAT, LOG_ROOT

_CONSOLE_HANDLER = "adsorbkit-console"
_FILE_HANDLER = "adsorbkit-file"


def _package_logger(log_file: Path) -> logging.Logger:
    root = logging.getLogger(LOG_ROOT)
    if root.handlers:
        return root
    root.setLevel(logging.DEBUG)
    root.propagate = False
    formatter = logging.Formatter(LOG_FORMAT)

    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.set_name(_CONSOLE_HANDLER)
    console_handler.setLevel(CONSOLE_LOG_LEVEL)
    console_handler.setFormatter(formatter)
    root.addHandler(console_handler)

    try:
        file_handler = logging.FileHandler(log_file, encoding="utf-8")
    except OSError as e:
        # read-only checkouts still get console logging
        root.warning(f"File logging disabled, cannot open {log_file}: {e}")
    else:
        file_handler.set_name(_FILE_HANDLER)
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(formatter)
        root.addHandler(file_handler)
    return root


def setup_logger(name: str = __name__, log_file: Path = LOG_FILE) -> logging.Logger:
    """
    Get the logger of one module.

    The first call installs the shared handlers; later calls only return a
    child logger, so importing many modules opens the log file once.

    Args:
        name: Module name, usually __name__
        log_file: Path to the log file used by the shared file handler

    Returns:
        Logger named '<package>.<name>'
    """
    _package_logger(log_file)
    return logging.getLogger(f"{LOG_ROOT}.{name}")


def set_console_level(level: int) -> None:
    """Change the console verbosity of every toolkit logger."""
    for handler in logging.getLogger(LOG_ROOT).handlers:
        if handler.get_name() == _CONSOLE_HANDLER:
            handler.setLevel(level)
