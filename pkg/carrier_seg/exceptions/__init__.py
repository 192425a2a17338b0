"""
Carrier segmentation exceptions module.

This module defines custom exceptions for the carrier-seg tool.
"""

from typing import Optional


class CarrierSegError(Exception):
    """Base exception for all carrier-seg related errors."""
    pass


class ConfigurationError(CarrierSegError):
    """Raised when there are configuration-related issues."""
    pass


class UnstableParameterError(ConfigurationError):
    """Raised when the diffusion coefficient breaks the stability bound."""
    pass


class ValidationError(CarrierSegError):
    """Raised when input validation fails."""
    pass


class DimensionMismatchError(ValidationError):
    """Raised when two grids that must align have different shapes."""

    def __init__(self, message: str, expected: Optional[tuple] = None,
                 actual: Optional[tuple] = None):
        """
        Initialize DimensionMismatchError with the offending shapes.

        Args:
            message: Error message
            expected: (width, height) of the reference grid
            actual: (width, height) of the mismatching grid
        """
        super().__init__(message)
        self.expected = expected
        self.actual = actual


class GeometryError(ValidationError):
    """Raised when a synthetic image is too small for its shapes."""
    pass


class CapacityError(ValidationError):
    """Raised when a label map has more regions than the format can hold."""
    pass


class PGMParseError(CarrierSegError):
    """Raised when PGM data is malformed."""

    def __init__(self, field: str, message: str):
        """
        Initialize PGMParseError.

        Args:
            field: Offending header field ('magic', 'width', 'height',
                   'maxval' or 'pixels')
            message: Error message
        """
        super().__init__(f"{field}: {message}")
        self.field = field


class FileOperationError(CarrierSegError):
    """Raised when file operations fail."""
    pass
