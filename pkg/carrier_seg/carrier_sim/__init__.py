"""
Virtual carrier drift and diffusion on the pixel grid.

Every pixel is a container of net carrier. At each interface between two
4-adjacent pixels the grayscale difference drives drift and the net carrier
difference drives diffusion. The grid is advanced synchronously until the
mean absolute change falls below a threshold; the sign of the net carrier at
that point is the segmentation signal.
"""

import csv
import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..exceptions import (
    ConfigurationError, DimensionMismatchError, UnstableParameterError, ValidationError
)
from ..pgm_io import GrayImage, SignMap
from ..utils import format_fixed

logger = logging.getLogger(__name__)

STABILITY_BOUND = 0.25
TRACE_HEADER = ("iteration", "mean_abs_change")

ArrayOrFloat = Union[float, np.ndarray]


@dataclass(frozen=True, eq=False)
class CarrierGrid:
    """Net carrier (positive minus negative) per pixel, shape (height, width)."""

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise ValidationError(f"CarrierGrid needs a non-empty 2D grid, got shape {values.shape}")
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)

    @classmethod
    def zeros(cls, width: int, height: int) -> 'CarrierGrid':
        return cls(np.zeros((height, width)))

    @classmethod
    def from_sequence(cls, width: int, height: int,
                      net_carrier: Sequence[float]) -> 'CarrierGrid':
        values = np.asarray(net_carrier, dtype=np.float64)
        if values.size != width * height:
            raise ValidationError(f"{values.size} values do not fill a {width}x{height} grid")
        return cls(values.reshape(height, width))

    @property
    def width(self) -> int:
        return int(self.values.shape[1])

    @property
    def height(self) -> int:
        return int(self.values.shape[0])

    @property
    def net_carrier(self) -> np.ndarray:
        """Row-major flat view of the net carrier."""
        return self.values.ravel()

    def total(self) -> float:
        return float(self.values.sum())


@dataclass(frozen=True)
class SimParams:
    """Simulation coefficients and stopping rule."""

    k1: float = 0.05
    k2: float = 0.2
    epsilon: float = 1e-6
    max_iters: int = 100000
    snapshot_iters: Tuple[int, ...] = ()
    zero_tol: float = 0.0
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, 'snapshot_iters', tuple(int(n) for n in self.snapshot_iters))
        self.validate()

    def validate(self) -> None:
        """
        Validate parameter bounds.

        Raises:
            UnstableParameterError: If k2 >= 0.25
            ConfigurationError: For any other invalid value
        """
        if not self.k1 > 0:
            raise ConfigurationError(f"k1 must be positive, got {self.k1}")
        if not self.k2 > 0:
            raise ConfigurationError(f"k2 must be positive, got {self.k2}")
        if self.k2 >= STABILITY_BOUND:
            raise UnstableParameterError(
                f"k2={self.k2} violates the stability bound k2 < {STABILITY_BOUND}")
        if not self.epsilon > 0:
            raise ConfigurationError(f"epsilon must be positive, got {self.epsilon}")
        if self.max_iters < 1:
            raise ConfigurationError(f"max_iters must be at least 1, got {self.max_iters}")
        if not self.zero_tol >= 0:
            raise ConfigurationError(f"zero_tol must be non-negative, got {self.zero_tol}")
        if self.workers < 1:
            raise ConfigurationError(f"workers must be at least 1, got {self.workers}")
        snaps = self.snapshot_iters
        if any(n < 1 for n in snaps) or any(a >= b for a, b in zip(snaps, snaps[1:])):
            raise ConfigurationError(
                f"snapshot iterations must be strictly ascending positive integers, got {list(snaps)}")


@dataclass(frozen=True)
class TraceEntry:
    iteration: int
    mean_abs_change: float


@dataclass
class ConvergenceTrace:
    """Mean absolute net carrier change per iteration."""

    entries: List[TraceEntry] = field(default_factory=list)

    def record(self, iteration: int, mean_abs_change: float) -> None:
        if iteration != len(self.entries) + 1:
            raise ValidationError(
                f"trace iterations must be consecutive from 1, got {iteration}")
        self.entries.append(TraceEntry(iteration, mean_abs_change))

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def values(self) -> List[float]:
        return [entry.mean_abs_change for entry in self.entries]

    def to_csv(self) -> str:
        """Serialize as 'iteration,mean_abs_change' rows."""
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator='\n')
        writer.writerow(TRACE_HEADER)
        for entry in self.entries:
            writer.writerow((entry.iteration, format_fixed(entry.mean_abs_change)))
        return buffer.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> 'ConvergenceTrace':
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header is None or tuple(header) != TRACE_HEADER:
            raise ValidationError(f"trace CSV must start with {','.join(TRACE_HEADER)}")
        trace = cls()
        for row in reader:
            if row:
                trace.record(int(row[0]), float(row[1]))
        return trace


@dataclass
class SimulationResult:
    """Outcome of one simulation run."""

    final: CarrierGrid
    trace: ConvergenceTrace
    snapshots: List[Tuple[int, SignMap]]
    converged: bool

    @property
    def iterations(self) -> int:
        return len(self.trace)


def interface_field(g: ArrayOrFloat, g_a: ArrayOrFloat, k: float) -> ArrayOrFloat:
    """Virtual field at an interface; positive when the pixel of interest is brighter."""
    return k * (g - g_a)


def drift_flux(g: ArrayOrFloat, g_a: ArrayOrFloat, k1: float) -> ArrayOrFloat:
    """
    Net carrier gained by the pixel of interest through drift at one interface.

    The brighter side attracts negative carriers, so the darker pixel gains
    what the brighter one loses.
    """
    return k1 * (g_a - g)


def diffuse_flux(c: ArrayOrFloat, c_a: ArrayOrFloat, k2: float) -> ArrayOrFloat:
    """Net carrier gained by the pixel of interest through diffusion at one interface."""
    return k2 * (c_a - c)


def _row_bands(height: int, workers: int) -> List[Tuple[int, int]]:
    bands = min(workers, height)
    edges = np.linspace(0, height, bands + 1).round().astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def _drift_fields(g: np.ndarray, k1: float) -> Tuple[np.ndarray, np.ndarray]:
    """Horizontal and vertical drift into the left / upper pixel; fixed for a run."""
    return drift_flux(g[:, :-1], g[:, 1:], k1), drift_flux(g[:-1], g[1:], k1)


def _band_fluxes(c: np.ndarray, drift: Tuple[np.ndarray, np.ndarray], k2: float,
                 rows: Tuple[int, int], horizontal: np.ndarray, vertical: np.ndarray) -> None:
    # Flux into the left / upper pixel of each interface owned by these rows
    drift_h, drift_v = drift
    r0, r1 = rows
    horizontal[r0:r1] = drift_h[r0:r1] + diffuse_flux(c[r0:r1, :-1], c[r0:r1, 1:], k2)
    v1 = min(r1, c.shape[0] - 1)
    if v1 > r0:
        vertical[r0:v1] = drift_v[r0:v1] + diffuse_flux(c[r0:v1], c[r0 + 1:v1 + 1], k2)


def _band_changes(horizontal: np.ndarray, vertical: np.ndarray, rows: Tuple[int, int],
                  delta: np.ndarray) -> None:
    # Fixed per-pixel order: right, left, lower, upper interface
    r0, r1 = rows
    height = delta.shape[0]
    band = delta[r0:r1]
    band[:, :-1] += horizontal[r0:r1]
    band[:, 1:] -= horizontal[r0:r1]
    v1 = min(r1, height - 1)
    if v1 > r0:
        band[:v1 - r0] += vertical[r0:v1]
    u0 = max(r0, 1)
    if r1 > u0:
        band[u0 - r0:] -= vertical[u0 - 1:r1 - 1]


def _check_dimensions(grid: CarrierGrid, img: GrayImage) -> None:
    if grid.values.shape != img.pixels.shape:
        raise DimensionMismatchError(
            f"carrier grid is {grid.width}x{grid.height} but image is {img.width}x{img.height}",
            expected=(img.width, img.height), actual=(grid.width, grid.height))


def _advance(c: np.ndarray, drift: Tuple[np.ndarray, np.ndarray], p: SimParams,
             executor: Optional[ThreadPoolExecutor]) -> Tuple[np.ndarray, float]:
    height, width = c.shape
    horizontal = np.empty((height, width - 1))
    vertical = np.empty((height - 1, width))
    delta = np.zeros((height, width))
    bands = _row_bands(height, p.workers)

    if executor is None or len(bands) == 1:
        for rows in bands:
            _band_fluxes(c, drift, p.k2, rows, horizontal, vertical)
        for rows in bands:
            _band_changes(horizontal, vertical, rows, delta)
    else:
        list(executor.map(lambda rows: _band_fluxes(c, drift, p.k2, rows, horizontal, vertical), bands))
        list(executor.map(lambda rows: _band_changes(horizontal, vertical, rows, delta), bands))

    mean_abs_change = float(np.abs(delta).sum() / delta.size)
    return c + delta, mean_abs_change


def step(grid: CarrierGrid, img: GrayImage, p: SimParams) -> Tuple[CarrierGrid, float]:
    """
    Advance the grid one synchronous iteration.

    Each interface flux is computed once from the previous buffer and applied
    with opposite signs to its two pixels; border pixels only see the
    interfaces they have.

    Returns:
        (next grid, mean absolute per-pixel change)

    Raises:
        DimensionMismatchError: If grid and image shapes differ
    """
    _check_dimensions(grid, img)
    drift = _drift_fields(img.pixels, p.k1)
    if p.workers > 1:
        with ThreadPoolExecutor(max_workers=p.workers) as executor:
            values, change = _advance(grid.values, drift, p, executor)
    else:
        values, change = _advance(grid.values, drift, p, None)
    return CarrierGrid(values), change


def sign_map(grid: CarrierGrid, zero_tol: float = 0.0) -> SignMap:
    """Classify each pixel's net carrier as positive, negative or zero."""
    values = grid.values
    return SignMap(np.where(values > zero_tol, 1, np.where(values < -zero_tol, -1, 0)))


def sign_counts(sm: SignMap) -> Tuple[int, int, int]:
    """Return (positive, negative, zero) pixel counts."""
    grid = sm.grid
    return int((grid > 0).sum()), int((grid < 0).sum()), int((grid == 0).sum())


def simulate(img: GrayImage, p: SimParams,
             on_iteration: Optional[Callable[[int, float], None]] = None) -> SimulationResult:
    """
    Run the relaxation from the all-zero state to balance.

    Stops when the mean absolute change drops below `p.epsilon` or after
    `p.max_iters` iterations. Sign maps are captured after each iteration
    listed in `p.snapshot_iters`.

    Args:
        img: Image supplying the drift field
        p: Simulation parameters
        on_iteration: Optional callback receiving (iteration, mean_abs_change)

    Returns:
        SimulationResult with final grid, trace, snapshots and converged flag
    """
    p.validate()
    g = img.pixels
    c = np.zeros_like(g)
    drift = _drift_fields(g, p.k1)
    trace = ConvergenceTrace()
    snapshots: List[Tuple[int, SignMap]] = []
    pending = list(p.snapshot_iters)
    converged = False

    logger.info(f"Simulating {img.width}x{img.height} image: k1={p.k1}, k2={p.k2}, "
                f"epsilon={p.epsilon}, max_iters={p.max_iters}")

    executor = ThreadPoolExecutor(max_workers=p.workers) if p.workers > 1 else None
    try:
        for iteration in range(1, p.max_iters + 1):
            c, change = _advance(c, drift, p, executor)
            trace.record(iteration, change)
            while pending and pending[0] == iteration:
                snapshots.append((iteration, sign_map(CarrierGrid(c), p.zero_tol)))
                pending.pop(0)
            if on_iteration is not None:
                on_iteration(iteration, change)
            if change < p.epsilon:
                converged = True
                break
    finally:
        if executor is not None:
            executor.shutdown()

    if converged:
        logger.info(f"Converged after {len(trace)} iterations "
                    f"(mean |change| {trace.values[-1]:.3e})")
    else:
        logger.warning(f"Stopped at max_iters={p.max_iters} without converging "
                       f"(mean |change| {trace.values[-1]:.3e} >= {p.epsilon})")
    if pending:
        logger.debug(f"Snapshot iterations past the end of the run: {pending}")

    return SimulationResult(CarrierGrid(c), trace, snapshots, converged)


def closed_form_balance(img: GrayImage, p: SimParams) -> CarrierGrid:
    """
    Balance state where drift and diffusion cancel at every interface:
    c(q) = -(k1/k2) * (g(q) - mean(g)).
    """
    g = img.pixels
    return CarrierGrid(-(p.k1 / p.k2) * (g - g.mean()))


def carrier_image(grid: CarrierGrid) -> GrayImage:
    """Render net carrier around mid gray, scaled by the largest magnitude."""
    values = grid.values
    peak = float(np.abs(values).max())
    if peak == 0.0:
        return GrayImage(np.full(values.shape, 0.5))
    return GrayImage(np.clip(0.5 + 0.5 * values / peak, 0.0, 1.0))
