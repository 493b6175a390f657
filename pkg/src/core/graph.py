"""Trip adjacency matrix, in-degree neighbours and region discovery."""

import logging
from collections import Counter
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from config import settings
from src.core.ingest import StationMeta, TripRecord
from src.utils.data_processor import export_to_csv, read_exported_csv
from src.utils.errors import LookupFailure, SchemaError, ValidationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AdjacencyMatrix:
    """Directed trip counts; ``counts[j, i]`` is trips from station j to station i.

    The diagonal is always zero; self-trips are kept in ``self_loops``.
    """
    station_index: Tuple[int, ...]
    counts: np.ndarray
    self_loops: np.ndarray

    def position(self, station_id) -> int:
        try:
            return self._positions[station_id]
        except KeyError:
            raise LookupFailure(f"station {station_id} is not in the adjacency matrix")

    @property
    def _positions(self):
        return {sid: pos for pos, sid in enumerate(self.station_index)}

    @property
    def total_trips(self) -> int:
        return int(self.counts.sum() + self.self_loops.sum())

    def __len__(self):
        return len(self.station_index)


@dataclass(frozen=True)
class NeighborSet:
    station_id: int
    neighbors: Tuple[int, ...]


@dataclass(frozen=True)
class RegionPartition:
    regions: Tuple[frozenset, ...]
    threshold_used: float
    threshold_fraction: float = 0.0

    def region_of(self) -> Dict[int, int]:
        return {sid: rid for rid, region in enumerate(self.regions) for sid in region}

    def sizes(self) -> List[int]:
        return [len(region) for region in self.regions]


@dataclass(frozen=True)
class RegionPurity:
    region_id: int
    size: int
    modal_zip: str
    purity: float


def build_adjacency(trips: Sequence[TripRecord], stations: Sequence[StationMeta]) -> AdjacencyMatrix:
    if not stations:
        raise ValidationError("cannot build an adjacency matrix without stations")
    index = tuple(sorted(s.station_id for s in stations))
    positions = {sid: pos for pos, sid in enumerate(index)}
    n = len(index)
    try:
        origin = np.fromiter((positions[t.start_station_id] for t in trips), dtype=np.int64, count=len(trips))
        dest = np.fromiter((positions[t.end_station_id] for t in trips), dtype=np.int64, count=len(trips))
    except KeyError as exc:
        raise ValidationError(f"trip references unknown station {exc.args[0]}")

    counts = np.zeros((n, n), dtype=np.int64)
    loops = origin == dest
    np.add.at(counts, (origin[~loops], dest[~loops]), 1)
    self_loops = np.bincount(origin[loops], minlength=n).astype(np.int64)
    logger.info("adjacency: %d stations, %d trips, %d self-trips", n, len(trips), int(self_loops.sum()))
    return AdjacencyMatrix(index, counts, self_loops)


def top_in_neighbors(adjacency: AdjacencyMatrix, station_id, k=settings.NEIGHBOR_COUNT) -> NeighborSet:
    """The k stations sending the most trips to ``station_id``.

    Ties go to the smaller station id; stations without inbound trips fill any
    remaining slots in ascending id order.
    """
    n = len(adjacency)
    if k < 1 or k >= n:
        raise ValidationError(f"k must be between 1 and {n - 1} for {n} stations, got {k}")
    target = adjacency.position(station_id)
    ids = np.asarray(adjacency.station_index)
    inbound = adjacency.counts[:, target]
    others = np.flatnonzero(ids != station_id)
    order = np.lexsort((ids[others], -inbound[others]))
    chosen = ids[others[order[:k]]]
    return NeighborSet(int(station_id), tuple(int(sid) for sid in chosen))


def neighbor_map(adjacency: AdjacencyMatrix, k=settings.NEIGHBOR_COUNT) -> Dict[int, NeighborSet]:
    return {sid: top_in_neighbors(adjacency, sid, k) for sid in adjacency.station_index}


def _ordered_regions(labels, ids):
    groups: Dict[int, List[int]] = {}
    for label, sid in zip(labels, ids):
        groups.setdefault(int(label), []).append(int(sid))
    return tuple(frozenset(members) for members in sorted(groups.values(), key=min))


def partition_regions(adjacency: AdjacencyMatrix,
                      threshold_fraction=settings.REGION_THRESHOLD_FRACTION) -> RegionPartition:
    """Connected components of the symmetrised trip graph after thresholding.

    An undirected edge survives when its two-way trip count is positive and at
    least ``threshold_fraction`` of all trips. Regions are ordered by their
    smallest station id.
    """
    if len(adjacency) == 0:
        raise ValidationError("adjacency matrix is empty")
    if not 0 <= threshold_fraction < 1:
        raise ValidationError(f"threshold_fraction must lie in [0, 1), got {threshold_fraction}")
    weights = adjacency.counts + adjacency.counts.T
    cutoff = threshold_fraction * adjacency.total_trips
    keep = (weights > 0) & (weights >= cutoff)
    n_regions, labels = connected_components(csr_matrix(keep.astype(np.int8)), directed=False)
    partition = RegionPartition(_ordered_regions(labels, adjacency.station_index), float(cutoff),
                                float(threshold_fraction))
    logger.info("partition at fraction %.4g: %d regions, sizes %s",
                threshold_fraction, n_regions, partition.sizes())
    return partition


def partition_by_zip(stations: Sequence[StationMeta]) -> RegionPartition:
    """One region per ZIP code."""
    ids = [s.station_id for s in stations]
    zips = sorted({s.zip_code for s in stations})
    label = {z: i for i, z in enumerate(zips)}
    return RegionPartition(_ordered_regions([label[s.zip_code] for s in stations], ids), 0.0)


def validate_partition_zip(partition: RegionPartition, stations: Sequence[StationMeta]) -> List[RegionPurity]:
    zip_of = {s.station_id: s.zip_code for s in stations}
    report = []
    for rid, region in enumerate(partition.regions):
        tally = Counter(zip_of[sid] for sid in region)
        modal_zip, hits = min(tally.items(), key=lambda item: (-item[1], item[0]))
        report.append(RegionPurity(rid, len(region), modal_zip, hits / len(region)))
    return report


def write_adjacency(adjacency: AdjacencyMatrix, filename, stamp=None):
    labels = [str(sid) for sid in adjacency.station_index]
    frame = pd.DataFrame(adjacency.counts, columns=labels)
    frame.insert(0, "station_id", adjacency.station_index)
    return export_to_csv(frame, filename, stamp)


def write_neighbors(neighbors: Dict[int, NeighborSet], filename, stamp=None):
    rows = [
        (sid, rank, neighbor)
        for sid, item in sorted(neighbors.items())
        for rank, neighbor in enumerate(item.neighbors, start=1)
    ]
    frame = pd.DataFrame(rows, columns=["station_id", "rank", "neighbor_id"])
    return export_to_csv(frame, filename, stamp)


def read_neighbors(filename) -> Dict[int, NeighborSet]:
    frame = read_exported_csv(filename)
    for column in ("station_id", "rank", "neighbor_id"):
        if column not in frame.columns:
            raise SchemaError(column, str(filename))
    result = {}
    for sid, part in frame.sort_values(["station_id", "rank"]).groupby("station_id", sort=True):
        result[int(sid)] = NeighborSet(int(sid), tuple(int(n) for n in part["neighbor_id"]))
    return result


def write_partition(partition: RegionPartition, filename, stamp=None):
    rows = sorted((sid, rid) for rid, region in enumerate(partition.regions) for sid in region)
    frame = pd.DataFrame(rows, columns=["station_id", "region_id"])
    return export_to_csv(frame, filename, stamp)


def read_partition(filename) -> RegionPartition:
    frame = read_exported_csv(filename)
    for column in ("station_id", "region_id"):
        if column not in frame.columns:
            raise SchemaError(column, str(filename))
    return RegionPartition(_ordered_regions(frame["region_id"], frame["station_id"]), 0.0)
