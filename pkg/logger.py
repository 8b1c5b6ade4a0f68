# logger.py

import os
from typing import Callable

from config import LOG_LEVEL_ENV


class AppLogger:
    """A simple logger class to handle different log levels."""

    def __init__(self, log_callback: Callable[[str], None], level: str = "Normal"):
        self.log_callback = log_callback
        self.level = level

    @classmethod
    def from_env(cls, log_callback: Callable[[str], None]) -> "AppLogger":
        """Builds a logger whose level comes from the environment."""
        level = os.environ.get(LOG_LEVEL_ENV, "Normal")
        if level.capitalize() not in ("Normal", "Debug"):
            level = "Normal"
        return cls(log_callback, level.capitalize())

    def info(self, message: str) -> None:
        """Logs a standard informational message."""
        self.log_callback(message)

    def debug(self, message: str) -> None:
        """Logs a message only if the log level is set to 'Debug'."""
        if self.level == "Debug":
            self.log_callback(f"[DEBUG] {message}")

    def warning(self, message: str) -> None:
        """Logs a warning message; the run continues."""
        self.log_callback(f"[WARNING] {message}")

    def error(self, message: str) -> None:
        """Logs an error message."""
        self.log_callback(f"[ERROR] {message}")

    def fatal(self, message: str) -> None:
        """Logs a fatal error message with distinctive formatting."""
        self.log_callback(f"\n--- [FATAL] {message} ---")


def silent_logger() -> AppLogger:
    """A logger that drops everything; the default for library calls."""
    return AppLogger(lambda message: None)
