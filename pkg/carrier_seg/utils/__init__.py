"""
Utility modules for carrier-seg.

This module contains logging setup, user feedback, number formatting and
atomic file output shared by the pipeline.
"""

import logging
import math
import os
import sys
import tempfile
from datetime import datetime
from pathlib import Path
from typing import Optional, Union

from ..exceptions import FileOperationError
from ..ui import Colors


class SafeFormatter(logging.Formatter):
    """A logging formatter that safely handles missing 'details' field."""

    def format(self, record):
        # Ensure 'details' field exists
        if not hasattr(record, 'details'):
            record.details = 'No additional details'
        return super().format(record)


class ColoredFormatter(logging.Formatter):
    """Custom log formatter with color support for console output."""

    # Color codes
    GREY = "\x1b[38;21m"
    BLUE = "\x1b[38;5;39m"
    YELLOW = "\x1b[38;5;226m"
    RED = "\x1b[38;5;196m"
    BOLD_RED = "\x1b[31;1m"
    RESET = "\x1b[0m"

    def __init__(self, fmt):
        super().__init__()
        self.fmt = fmt
        self.FORMATS = {
            logging.DEBUG: self.GREY + self.fmt + self.RESET,
            logging.INFO: self.BLUE + self.fmt + self.RESET,
            logging.WARNING: self.YELLOW + self.fmt + self.RESET,
            logging.ERROR: self.RED + self.fmt + self.RESET,
            logging.CRITICAL: self.BOLD_RED + self.fmt + self.RESET
        }

    def format(self, record):
        log_fmt = self.FORMATS.get(record.levelno)
        formatter = logging.Formatter(log_fmt)
        return formatter.format(record)


class LoggingManager:
    """Configures the package logger for one command-line run."""

    LOGGER_NAME = 'carrier_seg'

    def __init__(self, log_path: Optional[str] = None, verbose: bool = False):
        """
        Initialize logging.

        Args:
            log_path: Directory for per-day log files; console only when None
            verbose: Show INFO messages on the console
        """
        self.log_path = Path(log_path) if log_path else None
        self.logger = logging.getLogger(self.LOGGER_NAME)
        self.logger.setLevel(logging.DEBUG)
        self.logger.propagate = False

        # Re-running main() in one process must not stack handlers
        for handler in list(self.logger.handlers):
            self.logger.removeHandler(handler)
            handler.close()

        console_handler = logging.StreamHandler(sys.stderr)
        console_handler.setLevel(logging.INFO if verbose else logging.WARNING)
        console_handler.setFormatter(ColoredFormatter('%(message)s'))
        self.logger.addHandler(console_handler)

        if self.log_path is not None:
            try:
                self.log_path.mkdir(parents=True, exist_ok=True)
            except OSError as e:
                raise FileOperationError(f"Cannot create log directory {self.log_path}: {e}")

            file_handler = logging.FileHandler(self._get_log_file_path(), encoding='utf-8')
            file_handler.setLevel(logging.DEBUG)
            file_handler.setFormatter(SafeFormatter(
                '%(asctime)s [%(levelname)s] %(name)s: %(message)s\nDetails: %(details)s\n',
                datefmt='%Y-%m-%d %H:%M:%S'
            ))
            self.logger.addHandler(file_handler)
            self.logger.debug(
                f"Logging initialized - log file: {self._get_log_file_path()}",
                extra={'details': 'System initialization'})

    def _get_log_file_path(self) -> Path:
        """Get current log file path."""
        current_date = datetime.now().strftime("%Y%m%d")
        return self.log_path / f'segment_{current_date}.log'

    def get_logger(self) -> logging.Logger:
        """Get the configured logger."""
        return self.logger

    def close(self) -> None:
        """Detach and close all handlers."""
        for handler in list(self.logger.handlers):
            self.logger.removeHandler(handler)
            handler.close()


class ProgressManager:
    """Manages user-facing status lines."""

    def __init__(self, stream=None, error_stream=None):
        """
        Initialize progress manager.

        Args:
            stream: Stream for regular messages (stdout by default)
            error_stream: Stream for errors (stderr by default)
        """
        self.current_operation = None
        self._stream = stream
        self._error_stream = error_stream

    @property
    def stream(self):
        return self._stream or sys.stdout

    @property
    def error_stream(self):
        return self._error_stream or sys.stderr

    def show_operation(self, operation: str) -> None:
        """
        Show current operation to user.

        Args:
            operation: Description of current operation
        """
        self.current_operation = operation
        print(Colors.colorize(f"... {operation}", Colors.CYAN), file=self.stream)

    def complete_operation(self, success_message: Optional[str] = None) -> None:
        """
        Complete current operation with success message.

        Args:
            success_message: Custom success message
        """
        message = success_message or f"{self.current_operation} done"
        self.show_success(message)
        self.current_operation = None

    def show_success(self, message: str) -> None:
        print(Colors.colorize(f"[ok] {message}", Colors.GREEN), file=self.stream)

    def show_warning(self, message: str) -> None:
        print(Colors.colorize(f"[warn] {message}", Colors.YELLOW), file=self.error_stream)

    def show_error(self, message: str) -> None:
        print(Colors.colorize(f"[error] {message}", Colors.RED), file=self.error_stream)

    def show_info(self, message: str) -> None:
        print(Colors.colorize(f"[info] {message}", Colors.BLUE), file=self.stream)


def format_fixed(value: float, significant: int = 12) -> str:
    """
    Format a non-negative number positionally with at least `significant`
    significant digits.

    Args:
        value: Number to format
        significant: Minimum significant digits

    Returns:
        Formatted number, e.g. 0.05 -> '0.0500000000000'
    """
    decimals = significant
    magnitude = abs(value)
    if magnitude > 0.0 and magnitude < 1.0:
        decimals = significant - 1 - int(math.floor(math.log10(magnitude)))
    return f"{value:.{decimals}f}"


def atomic_write(path: Union[str, Path], data: Union[bytes, str]) -> Path:
    """
    Write a file through a temporary sibling and rename it into place.

    A failure leaves no partial file at `path`.

    Args:
        path: Destination file
        data: File content; text is encoded as UTF-8

    Returns:
        The destination path

    Raises:
        FileOperationError: If the file cannot be written
    """
    target = Path(path)
    payload = data.encode('utf-8') if isinstance(data, str) else data
    tmp_name = None
    try:
        with tempfile.NamedTemporaryFile(
                dir=str(target.parent or Path('.')), prefix=f'.{target.name}.',
                suffix='.tmp', delete=False) as tmp:
            tmp_name = tmp.name
            tmp.write(payload)
        # Temporary files are created 0600; give the result the usual umask mode
        umask = os.umask(0)
        os.umask(umask)
        os.chmod(tmp_name, 0o666 & ~umask)
        os.replace(tmp_name, target)
    except OSError as e:
        if tmp_name is not None:
            try:
                os.unlink(tmp_name)
            except OSError:
                pass
        raise FileOperationError(f"Cannot write {target}: {e}")
    return target
