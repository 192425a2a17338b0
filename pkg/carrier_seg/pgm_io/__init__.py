"""
Grayscale image types and PGM input/output for carrier-seg.

This module handles reading and writing PGM files, synthetic test image
generation, and rendering of sign maps and label maps to viewable images.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from pathlib import Path
from typing import NamedTuple, Sequence, Union

import numpy as np

from ..exceptions import (
    CapacityError, FileOperationError, GeometryError, PGMParseError, ValidationError
)

logger = logging.getLogger(__name__)

LABEL_CAPACITY = 65536
ZERO_SIGN_LEVEL = 128 / 255

_WHITESPACE = b' \t\r\n\v\f'


def _freeze(array: np.ndarray) -> np.ndarray:
    array = np.array(array, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Grid of normalized grayscale intensities in [0, 1], shape (height, width)."""

    pixels: np.ndarray

    def __post_init__(self):
        pixels = np.asarray(self.pixels, dtype=np.float64)
        if pixels.ndim != 2 or pixels.shape[0] < 1 or pixels.shape[1] < 1:
            raise ValidationError(f"GrayImage needs a non-empty 2D grid, got shape {pixels.shape}")
        if not np.all(np.isfinite(pixels)) or pixels.min() < 0.0 or pixels.max() > 1.0:
            raise ValidationError("GrayImage intensities must lie in [0, 1]")
        object.__setattr__(self, 'pixels', _freeze(pixels))

    @classmethod
    def from_sequence(cls, width: int, height: int,
                      intensities: Sequence[float]) -> 'GrayImage':
        """Build an image from a row-major intensity sequence."""
        values = np.asarray(intensities, dtype=np.float64)
        if width < 1 or height < 1 or values.size != width * height:
            raise ValidationError(
                f"{values.size} intensities do not fill a {width}x{height} image")
        return cls(values.reshape(height, width))

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def intensities(self) -> np.ndarray:
        """Row-major flat view of the intensities."""
        return self.pixels.ravel()


class Sign(IntEnum):
    """Sign class of a pixel's net carrier."""
    NEGATIVE = -1
    ZERO = 0
    POSITIVE = 1


@dataclass(frozen=True, eq=False)
class SignMap:
    """Per-pixel sign classes, stored as int8 values of `Sign`."""

    grid: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid)
        if grid.ndim != 2 or grid.shape[0] < 1 or grid.shape[1] < 1:
            raise ValidationError(f"SignMap needs a non-empty 2D grid, got shape {grid.shape}")
        if not np.all(np.isin(grid, (-1, 0, 1))):
            raise ValidationError("SignMap values must be -1, 0 or 1")
        object.__setattr__(self, 'grid', _freeze(grid.astype(np.int8)))

    @classmethod
    def from_sequence(cls, width: int, height: int,
                      signs: Sequence[Union[Sign, int]]) -> 'SignMap':
        values = np.asarray([int(s) for s in signs], dtype=np.int8)
        if values.size != width * height:
            raise ValidationError(f"{values.size} signs do not fill a {width}x{height} map")
        return cls(values.reshape(height, width))

    @property
    def width(self) -> int:
        return int(self.grid.shape[1])

    @property
    def height(self) -> int:
        return int(self.grid.shape[0])

    @property
    def signs(self) -> list:
        """Row-major list of `Sign` members."""
        return [Sign(int(v)) for v in self.grid.ravel()]

    def __eq__(self, other) -> bool:
        if not isinstance(other, SignMap):
            return NotImplemented
        return self.grid.shape == other.grid.shape and bool(np.array_equal(self.grid, other.grid))

    def __hash__(self) -> int:
        return hash((self.grid.shape, self.grid.tobytes()))


@dataclass(frozen=True, eq=False)
class LabelMap:
    """Per-pixel region identifiers forming the contiguous range 0..R-1."""

    grid: np.ndarray
    region_count: int = field(init=False)

    def __post_init__(self):
        grid = np.asarray(self.grid)
        if grid.ndim != 2 or grid.shape[0] < 1 or grid.shape[1] < 1:
            raise ValidationError(f"LabelMap needs a non-empty 2D grid, got shape {grid.shape}")
        if not np.issubdtype(grid.dtype, np.integer):
            raise ValidationError("LabelMap labels must be integers")
        grid = grid.astype(np.int64)
        present = np.unique(grid)
        if present[0] != 0 or present[-1] != present.size - 1:
            raise ValidationError("LabelMap labels must form the contiguous range 0..R-1")
        object.__setattr__(self, 'grid', _freeze(grid))
        object.__setattr__(self, 'region_count', int(present.size))

    @classmethod
    def from_sequence(cls, width: int, height: int, labels: Sequence[int]) -> 'LabelMap':
        values = np.asarray(labels, dtype=np.int64)
        if values.size != width * height:
            raise ValidationError(f"{values.size} labels do not fill a {width}x{height} map")
        return cls(values.reshape(height, width))

    @property
    def width(self) -> int:
        return int(self.grid.shape[1])

    @property
    def height(self) -> int:
        return int(self.grid.shape[0])

    @property
    def labels(self) -> np.ndarray:
        """Row-major flat view of the labels."""
        return self.grid.ravel()


class _PGMHeader(NamedTuple):
    magic: bytes
    width: int
    height: int
    maxval: int
    data_offset: int


def _next_token(data: bytes, pos: int, field_name: str):
    """Return (token, end) skipping whitespace and '#' comment lines."""
    size = len(data)
    while pos < size:
        byte = data[pos:pos + 1]
        if byte == b'#':
            while pos < size and data[pos:pos + 1] not in (b'\n', b'\r'):
                pos += 1
        elif byte in _WHITESPACE:
            pos += 1
        else:
            break
    start = pos
    while pos < size and data[pos:pos + 1] not in _WHITESPACE and data[pos:pos + 1] != b'#':
        pos += 1
    if start == pos:
        raise PGMParseError(field_name, "missing header field")
    token = data[start:pos]
    try:
        return int(token.decode('ascii')), pos
    except (UnicodeDecodeError, ValueError):
        raise PGMParseError(field_name, f"not an integer: {token!r}")


def _parse_header(data: bytes) -> _PGMHeader:
    magic = data[:2]
    if magic not in (b'P2', b'P5') or (len(data) > 2 and data[2:3] not in _WHITESPACE + b'#'):
        raise PGMParseError('magic', f"unsupported magic {magic!r}")

    width, pos = _next_token(data, 2, 'width')
    if width < 1:
        raise PGMParseError('width', f"nonpositive width {width}")
    height, pos = _next_token(data, pos, 'height')
    if height < 1:
        raise PGMParseError('height', f"nonpositive height {height}")
    maxval, pos = _next_token(data, pos, 'maxval')

    # Exactly one whitespace byte separates the header from binary samples
    if magic == b'P5':
        if pos >= len(data) or data[pos:pos + 1] not in _WHITESPACE:
            raise PGMParseError('pixels', "truncated pixel data")
        pos += 1
    return _PGMHeader(magic, width, height, maxval, pos)


def _read_samples(data: bytes, header: _PGMHeader, sample_dtype: str) -> np.ndarray:
    count = header.width * header.height
    if header.magic == b'P5':
        sample_size = np.dtype(sample_dtype).itemsize
        body = data[header.data_offset:header.data_offset + count * sample_size]
        if len(body) < count * sample_size:
            raise PGMParseError(
                'pixels', f"truncated pixel data: {len(body) // sample_size} of {count} samples")
        samples = np.frombuffer(body, dtype=sample_dtype).astype(np.int64)
    else:
        tokens = data[header.data_offset:].split()
        if len(tokens) < count:
            raise PGMParseError('pixels', f"truncated pixel data: {len(tokens)} of {count} samples")
        try:
            samples = np.array([int(t) for t in tokens[:count]], dtype=np.int64)
        except ValueError:
            raise PGMParseError('pixels', "non-numeric sample in ASCII pixel data")
    if samples.size and (samples.min() < 0 or samples.max() > header.maxval):
        raise PGMParseError('pixels', f"sample outside 0..{header.maxval}")
    return samples.reshape(header.height, header.width)


def read_pgm(data: bytes) -> GrayImage:
    """
    Parse an 8-bit PGM (P2 or P5) into a normalized GrayImage.

    Args:
        data: Raw file content

    Returns:
        Image with intensity = raw_value / maxval

    Raises:
        PGMParseError: If the header or pixel data is malformed
    """
    header = _parse_header(data)
    if not 1 <= header.maxval <= 255:
        raise PGMParseError('maxval', f"maxval {header.maxval} outside 1..255")
    samples = _read_samples(data, header, 'u1')
    logger.debug(f"Read {header.magic.decode()} image {header.width}x{header.height}, "
                 f"maxval {header.maxval}")
    return GrayImage(samples / float(header.maxval))


def read_pgm_file(path: Union[str, Path]) -> GrayImage:
    """Read a PGM file from disk."""
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise FileOperationError(f"Cannot read {path}: {e}")
    return read_pgm(data)


def quantize8(pixels: np.ndarray) -> np.ndarray:
    """Round intensities half-up to bytes."""
    return np.clip(np.floor(np.asarray(pixels) * 255.0 + 0.5), 0, 255).astype(np.uint8)


def write_pgm8(img: GrayImage) -> bytes:
    """Encode an image as binary PGM with maxval 255."""
    header = f"P5\n{img.width} {img.height}\n255\n".encode('ascii')
    return header + quantize8(img.pixels).tobytes()


def write_labels16(lm: LabelMap) -> bytes:
    """
    Encode a label map losslessly as 16-bit big-endian PGM.

    Raises:
        CapacityError: If the map has more than 65536 regions
    """
    if lm.region_count > LABEL_CAPACITY:
        raise CapacityError(
            f"{lm.region_count} regions exceed the 16-bit label capacity of {LABEL_CAPACITY}")
    header = f"P5\n{lm.width} {lm.height}\n65535\n".encode('ascii')
    return header + lm.grid.astype('>u2').tobytes()


def read_labels16(data: bytes) -> LabelMap:
    """Parse a label map written by write_labels16."""
    header = _parse_header(data)
    if header.magic != b'P5':
        raise PGMParseError('magic', "label maps must be binary P5")
    if header.maxval != 65535:
        raise PGMParseError('maxval', f"label maps need maxval 65535, got {header.maxval}")
    return LabelMap(_read_samples(data, header, '>u2'))


class ImageKind(Enum):
    """Synthetic test image layouts."""
    TWO_HALVES = "TwoHalves"
    RECTANGLE = "Rectangle"
    THREE_SHAPES = "ThreeShapes"

    @classmethod
    def parse(cls, name: str) -> 'ImageKind':
        """Parse a kind name, ignoring case, '-' and '_'."""
        wanted = name.replace('-', '').replace('_', '').lower()
        for kind in cls:
            if kind.value.lower() == wanted:
                return kind
        choices = ', '.join(kind.value for kind in cls)
        raise ValidationError(f"Unknown test image kind '{name}' (choose from {choices})")


TWO_HALVES_LEVELS = (0.3, 0.7)
RECTANGLE_LEVELS = (0.7, 0.3)
THREE_SHAPES_LEVELS = (0.8, 0.2, 0.3, 0.4)


def _two_halves(width: int, height: int) -> np.ndarray:
    if width < 2:
        raise GeometryError(f"TwoHalves needs width >= 2, got {width}")
    left, right = TWO_HALVES_LEVELS
    columns = np.arange(width)
    row = np.where(columns * 2 < width, left, right)
    return np.tile(row, (height, 1))


def _rectangle(width: int, height: int) -> np.ndarray:
    rect_w, rect_h = width // 2, height // 2
    if rect_w < 1 or rect_h < 1:
        raise GeometryError(f"Rectangle needs at least 2x2 pixels, got {width}x{height}")
    background, inside = RECTANGLE_LEVELS
    pixels = np.full((height, width), background)
    x0, y0 = (width - rect_w) // 2, (height - rect_h) // 2
    pixels[y0:y0 + rect_h, x0:x0 + rect_w] = inside
    return pixels


def _three_shapes(width: int, height: int) -> np.ndarray:
    # Square top-left, disk top-right, triangle across the bottom half.
    # Every shape keeps `margin` pixels to its quadrant edges, so shapes are
    # 2*margin >= 4 pixels apart and never touch the border.
    margin = max(2, min(width, height) // 16)
    half_w, half_h = width // 2, height // 2
    side = min(half_w, half_h) - 2 * margin
    radius = (min(width - half_w, half_h) - 2 * margin) / 2.0
    tri_top, tri_bottom = half_h + margin, height - margin
    if side < 2 or radius < 1.0 or tri_bottom - tri_top < 2:
        raise GeometryError(
            f"ThreeShapes needs room for three separated shapes, got {width}x{height}")

    background, square_level, disk_level, triangle_level = THREE_SHAPES_LEVELS
    pixels = np.full((height, width), background)
    ys, xs = np.mgrid[0:height, 0:width]
    cx_px, cy_px = xs + 0.5, ys + 0.5

    square = (xs >= margin) & (xs < margin + side) & (ys >= margin) & (ys < margin + side)

    disk_cx = half_w + (width - half_w) / 2.0
    disk_cy = half_h / 2.0
    disk = (cx_px - disk_cx) ** 2 + (cy_px - disk_cy) ** 2 <= radius ** 2

    tri_height = tri_bottom - tri_top
    half_base = (width - 2 * margin) / 2.0
    progress = (cy_px - tri_top) / tri_height
    triangle = ((ys >= tri_top) & (ys < tri_bottom)
                & (np.abs(cx_px - width / 2.0) <= progress * half_base))

    for mask, level in ((square, square_level), (disk, disk_level), (triangle, triangle_level)):
        if not mask.any():
            raise GeometryError(f"ThreeShapes shape vanished at {width}x{height}")
        pixels[mask] = level
    return pixels


_GENERATORS = {
    ImageKind.TWO_HALVES: _two_halves,
    ImageKind.RECTANGLE: _rectangle,
    ImageKind.THREE_SHAPES: _three_shapes,
}


def make_test_image(kind: Union[ImageKind, str], width: int, height: int) -> GrayImage:
    """
    Generate a synthetic test image.

    TwoHalves: left half 0.3, right half 0.7. Rectangle: background 0.7 with
    a centered (width/2)x(height/2) rectangle at 0.3. ThreeShapes: background
    0.8 with a square (0.2), a disk (0.3) and a triangle (0.4).

    Raises:
        GeometryError: If the dimensions cannot host the layout
    """
    if isinstance(kind, str):
        kind = ImageKind.parse(kind)
    if width < 1 or height < 1:
        raise GeometryError(f"Image dimensions must be positive, got {width}x{height}")
    return GrayImage(_GENERATORS[kind](width, height))


def render_sign_map(sm: SignMap) -> GrayImage:
    """Positive -> white, Negative -> black, Zero -> mid gray."""
    levels = np.where(sm.grid > 0, 1.0, np.where(sm.grid < 0, 0.0, ZERO_SIGN_LEVEL))
    return GrayImage(levels)


def label_levels(region_count: int) -> np.ndarray:
    """8-bit display level for each region id."""
    step = max(255 // max(region_count - 1, 1), 1)
    return (np.arange(region_count, dtype=np.int64) * step) % 256


def render_label_map(lm: LabelMap) -> GrayImage:
    """Render regions as evenly spaced gray levels; ids wrap past 256 regions."""
    levels = label_levels(lm.region_count)
    return GrayImage(levels[lm.grid] / 255.0)
