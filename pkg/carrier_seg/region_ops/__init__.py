"""
Region grouping and merging for carrier-seg.

Pixels sharing a sign class are grouped into 4-connected regions, then
adjacent regions with the closest mean grayscale are merged until a target
region count is reached.
"""

import csv
import heapq
import io
import logging
from dataclasses import dataclass
from typing import Dict, FrozenSet, List, Set, Tuple

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from ..exceptions import DimensionMismatchError, ValidationError
from ..pgm_io import GrayImage, LabelMap, SignMap
from ..utils import format_fixed

logger = logging.getLogger(__name__)

STRUCTURE_4 = np.array([[0, 1, 0],
                        [1, 1, 1],
                        [0, 1, 0]], dtype=int)

# Mean differences this close to the minimum count as ties
MERGE_TIE_TOLERANCE = 1e-12

REGIONS_HEADER = ("region_id", "pixel_count", "mean_gray")


@dataclass(frozen=True)
class RegionStats:
    region_id: int
    pixel_count: int
    mean_gray: float
    neighbors: FrozenSet[int]


@dataclass(frozen=True, eq=False)
class Partition:
    """Label map plus per-region statistics indexed by region id."""

    label_map: LabelMap
    regions: Tuple[RegionStats, ...]

    @property
    def region_count(self) -> int:
        return len(self.regions)

    def means(self) -> List[float]:
        return [region.mean_gray for region in self.regions]


def _adjacent_pairs(grid: np.ndarray) -> np.ndarray:
    """Unique (a, b), a < b, label pairs across 4-connectivity interfaces."""
    pairs = []
    for first, second in ((grid[:, :-1], grid[:, 1:]), (grid[:-1, :], grid[1:, :])):
        differ = first != second
        if differ.any():
            a, b = first[differ], second[differ]
            pairs.append(np.stack((np.minimum(a, b), np.maximum(a, b)), axis=1))
    if not pairs:
        return np.empty((0, 2), dtype=np.int64)
    return np.unique(np.concatenate(pairs), axis=0)


def partition_from_labels(labels: np.ndarray, img: GrayImage) -> Partition:
    """
    Build a Partition from a contiguous label grid and the image it labels.

    Raises:
        DimensionMismatchError: If labels and image shapes differ
    """
    label_map = labels if isinstance(labels, LabelMap) else LabelMap(labels)
    if label_map.grid.shape != img.pixels.shape:
        raise DimensionMismatchError(
            f"label map is {label_map.width}x{label_map.height} "
            f"but image is {img.width}x{img.height}",
            expected=(img.width, img.height), actual=(label_map.width, label_map.height))

    flat = label_map.labels
    count = label_map.region_count
    pixel_counts = np.bincount(flat, minlength=count)
    gray_sums = np.bincount(flat, weights=img.intensities, minlength=count)

    neighbors: Dict[int, Set[int]] = {rid: set() for rid in range(count)}
    for a, b in _adjacent_pairs(label_map.grid):
        neighbors[int(a)].add(int(b))
        neighbors[int(b)].add(int(a))

    regions = tuple(
        RegionStats(rid, int(pixel_counts[rid]), float(gray_sums[rid] / pixel_counts[rid]),
                    frozenset(neighbors[rid]))
        for rid in range(count))
    return Partition(label_map, regions)


def group_regions(sm: SignMap, img: GrayImage) -> Partition:
    """
    Group 4-connected pixels of equal sign class into regions.

    Region ids follow the raster-scan order of each region's first pixel.

    Raises:
        DimensionMismatchError: If sign map and image shapes differ
    """
    if sm.grid.shape != img.pixels.shape:
        raise DimensionMismatchError(
            f"sign map is {sm.width}x{sm.height} but image is {img.width}x{img.height}",
            expected=(img.width, img.height), actual=(sm.width, sm.height))

    provisional = np.zeros(sm.grid.shape, dtype=np.int64)
    offset = 0
    for sign_class in (-1, 0, 1):
        mask = sm.grid == sign_class
        if not mask.any():
            continue
        labeled, num_features = ndimage.label(mask, structure=STRUCTURE_4)
        provisional[mask] = labeled[mask] - 1 + offset
        offset += num_features

    unique_ids, first_index = np.unique(provisional.ravel(), return_index=True)
    raster_order = np.empty(offset, dtype=np.int64)
    raster_order[unique_ids[np.argsort(first_index)]] = np.arange(unique_ids.size)

    partition = partition_from_labels(raster_order[provisional], img)
    logger.info(f"Grouped sign map into {partition.region_count} regions")
    return partition


def build_rag(p: Partition) -> FrozenSet[Tuple[int, int]]:
    """Region adjacency graph as unordered (smaller id, larger id) pairs."""
    return frozenset((int(a), int(b)) for a, b in _adjacent_pairs(p.label_map.grid))


def _weighted_mean(mean_a: float, count_a: int, mean_b: float, count_b: int) -> float:
    return (mean_a * count_a + mean_b * count_b) / (count_a + count_b)


class _RegionGraph:
    """Mutable region adjacency graph driving the merge loop."""

    def __init__(self, partition: Partition):
        self.partition = partition
        self.count = {r.region_id: r.pixel_count for r in partition.regions}
        self.mean = {r.region_id: r.mean_gray for r in partition.regions}
        self.neighbors = {r.region_id: set(r.neighbors) for r in partition.regions}
        self.version = {rid: 0 for rid in self.count}
        self.absorbed_into: Dict[int, int] = {}
        self._heap: List[Tuple[float, int, int, int, int]] = []
        for r in partition.regions:
            for n in r.neighbors:
                if r.region_id < n:
                    self._push(r.region_id, n)

    def __len__(self) -> int:
        return len(self.count)

    def _push(self, a: int, b: int) -> None:
        heapq.heappush(self._heap, (abs(self.mean[a] - self.mean[b]), a, b,
                                    self.version[a], self.version[b]))

    def _is_current(self, entry) -> bool:
        _, a, b, ver_a, ver_b = entry
        return (a in self.count and b in self.count
                and self.version[a] == ver_a and self.version[b] == ver_b)

    def _pop_current(self):
        while self._heap:
            entry = heapq.heappop(self._heap)
            if self._is_current(entry):
                return entry
        return None

    def best_pair(self) -> Tuple[int, int]:
        """Closest-mean adjacent pair; ties go to the smallest (a, b)."""
        first = self._pop_current()
        if first is None:
            raise ValidationError("no adjacent regions left to merge")
        candidates = [first]
        limit = first[0] + MERGE_TIE_TOLERANCE
        while self._heap and self._heap[0][0] <= limit:
            entry = heapq.heappop(self._heap)
            if self._is_current(entry):
                candidates.append(entry)
        chosen = min(candidates, key=lambda entry: (entry[1], entry[2]))
        for entry in candidates:
            if entry is not chosen:
                heapq.heappush(self._heap, entry)
        return chosen[1], chosen[2]

    def merge(self, keep: int, drop: int) -> None:
        """Fold region `drop` into region `keep`."""
        self.mean[keep] = _weighted_mean(self.mean[keep], self.count[keep],
                                         self.mean[drop], self.count[drop])
        self.count[keep] += self.count[drop]
        merged_neighbors = (self.neighbors[keep] | self.neighbors[drop]) - {keep, drop}
        for n in self.neighbors[drop]:
            if n != keep:
                self.neighbors[n].discard(drop)
                self.neighbors[n].add(keep)
        self.neighbors[keep] = merged_neighbors
        for table in (self.count, self.mean, self.neighbors, self.version):
            del table[drop]
        self.absorbed_into[drop] = keep
        self.version[keep] += 1
        for n in merged_neighbors:
            self._push(min(keep, n), max(keep, n))

    def merge_best(self) -> Tuple[int, int]:
        keep, drop = self.best_pair()
        self.merge(keep, drop)
        return keep, drop

    def _survivor(self, rid: int) -> int:
        path = []
        while rid in self.absorbed_into:
            path.append(rid)
            rid = self.absorbed_into[rid]
        for visited in path:
            self.absorbed_into[visited] = rid
        return rid

    def to_partition(self) -> Partition:
        """Compact surviving ids in order and relabel pixels once."""
        survivors = sorted(self.count)
        new_id = {old: new for new, old in enumerate(survivors)}
        old_count = self.partition.region_count
        lookup = np.array([new_id[self._survivor(rid)] for rid in range(old_count)],
                          dtype=np.int64)
        regions = tuple(
            RegionStats(new_id[old], self.count[old], self.mean[old],
                        frozenset(new_id[n] for n in self.neighbors[old]))
            for old in survivors)
        return Partition(LabelMap(lookup[self.partition.label_map.grid]), regions)


def merge_once(p: Partition) -> Partition:
    """
    Merge the adjacent pair with the least mean grayscale difference.

    The merged region keeps the smaller id; larger ids shift down by one.

    Raises:
        ValidationError: If the partition has fewer than 2 regions
    """
    if p.region_count < 2:
        raise ValidationError(f"merging needs at least 2 regions, got {p.region_count}")
    graph = _RegionGraph(p)
    keep, drop = graph.merge_best()
    logger.debug(f"Merged region {drop} into {keep}")
    return graph.to_partition()


def merge_to_target(p: Partition, target: int) -> Partition:
    """
    Merge closest-mean neighbors until at most `target` regions remain.

    Equivalent to applying merge_once (initial - target) times.
    """
    if target < 1:
        raise ValidationError(f"target region count must be at least 1, got {target}")
    if p.region_count <= target:
        return p

    graph = _RegionGraph(p)
    while len(graph) > target:
        graph.merge_best()
    merged = graph.to_partition()
    logger.info(f"Merged {p.region_count} regions down to {merged.region_count}")
    return merged


def validate_partition(p: Partition, img: GrayImage) -> None:
    """
    Check labels, statistics and 4-connectivity of every region.

    Raises:
        ValidationError: If any partition invariant is broken
    """
    grid = p.label_map.grid
    if grid.shape != img.pixels.shape:
        raise DimensionMismatchError("partition and image shapes differ",
                                     expected=(img.width, img.height),
                                     actual=(p.label_map.width, p.label_map.height))
    if p.label_map.region_count != p.region_count:
        raise ValidationError(
            f"{p.label_map.region_count} labels but {p.region_count} region records")
    if sum(r.pixel_count for r in p.regions) != grid.size:
        raise ValidationError("region pixel counts do not sum to the image size")

    height, width = grid.shape
    index = np.arange(grid.size).reshape(height, width)
    rows, cols = [], []
    for same, a, b in ((grid[:, :-1] == grid[:, 1:], index[:, :-1], index[:, 1:]),
                       (grid[:-1, :] == grid[1:, :], index[:-1, :], index[1:, :])):
        rows.append(a[same])
        cols.append(b[same])
    rows_all, cols_all = np.concatenate(rows), np.concatenate(cols)
    graph = coo_matrix((np.ones(rows_all.size), (rows_all, cols_all)),
                       shape=(grid.size, grid.size))
    components, _ = connected_components(graph, directed=False)
    if components != p.region_count:
        raise ValidationError(
            f"{components} connected pieces for {p.region_count} regions; "
            "some region is not 4-connected")

    expected = partition_from_labels(p.label_map, img)
    for region, fresh in zip(p.regions, expected.regions):
        if region.region_id != fresh.region_id or region.pixel_count != fresh.pixel_count:
            raise ValidationError(f"region {fresh.region_id} statistics are out of date")
        if region.neighbors != fresh.neighbors:
            raise ValidationError(f"region {fresh.region_id} neighbor set is out of date")
        if abs(region.mean_gray - fresh.mean_gray) > 1e-9:
            raise ValidationError(f"region {fresh.region_id} mean drifted from its pixels")


def regions_to_csv(p: Partition) -> str:
    """Serialize region statistics as 'region_id,pixel_count,mean_gray' rows."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(REGIONS_HEADER)
    for region in p.regions:
        writer.writerow((region.region_id, region.pixel_count, format_fixed(region.mean_gray)))
    return buffer.getvalue()
