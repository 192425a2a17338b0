"""
Terminal UI components for carrier-seg.

This module provides colors, summary blocks and a progress bar for the
command-line pipeline.
"""

import sys
from typing import Iterable, Tuple, Any


class Colors:
    """ANSI color codes for terminal styling."""

    # Basic colors
    RED = "\033[91m"
    GREEN = "\033[92m"
    YELLOW = "\033[93m"
    BLUE = "\033[94m"
    CYAN = "\033[96m"

    # Styles
    BOLD = "\033[1m"

    # Reset
    RESET = "\033[0m"

    enabled = True

    @classmethod
    def colorize(cls, text: str, color: str) -> str:
        """Colorize text."""
        if not cls.enabled:
            return text
        return f"{color}{text}{cls.RESET}"


class StatusDisplay:
    """Header and summary output."""

    @staticmethod
    def show_header(title: str, subtitle: str = "", stream=None) -> None:
        """Show styled header."""
        out = stream or sys.stdout
        width = max(len(title), len(subtitle)) + 4

        print(f"\n+{'-' * width}+", file=out)
        print(f"| {Colors.colorize(title.center(width - 2), Colors.BOLD)} |", file=out)
        if subtitle:
            print(f"| {subtitle.center(width - 2)} |", file=out)
        print(f"+{'-' * width}+", file=out)

    @staticmethod
    def show_summary(rows: Iterable[Tuple[str, Any]], stream=None) -> None:
        """Show an aligned key/value block."""
        out = stream or sys.stdout
        rows = list(rows)
        if not rows:
            return
        key_width = max(len(key) for key, _ in rows)
        for key, value in rows:
            print(f"  {key.ljust(key_width)} : {value}", file=out)


class ProgressBar:
    """Progress bar for long iterative runs."""

    def __init__(self, total: int, width: int = 40, stream=None):
        self.total = max(total, 1)
        self.width = width
        self.current = 0
        self.stream = stream or sys.stderr

    def update(self, value: int, description: str = "") -> None:
        """Update progress bar."""
        self.current = min(value, self.total)
        percent = (self.current / self.total) * 100
        filled = int(self.width * self.current // self.total)
        bar = '#' * filled + '.' * (self.width - filled)

        self.stream.write(f'\r[{bar}] {percent:5.1f}% {description}')
        self.stream.flush()

    def finish(self, message: str = "Complete") -> None:
        """Finish progress bar."""
        self.stream.write(f'\r[{"#" * self.width}] 100.0% {message}\n')
        self.stream.flush()
