"""Mean absolute error per station and the sweep report that collects it."""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from src.core.features import inverse_target
from src.utils.data_processor import export_to_csv
from src.utils.errors import InvariantError, ValidationError

logger = logging.getLogger(__name__)

ROW_COLUMNS = ["model", "delta_minutes", "trees_or_components", "station_id",
               "mae_bikes", "mae_log", "n_test_rows"]
SUMMARY_COLUMNS = ["model", "delta_minutes", "trees_or_components", "mae_bikes",
                   "mae_bikes_unweighted", "mae_log", "n_test_rows", "n_stations"]


@dataclass
class StationError:
    mae_bikes: float
    mae_log: float
    n_rows: int
    size: Optional[int] = None  # per-station model size when it varies (PLSR)


@dataclass
class MaeCell:
    """MAE of one (model, horizon, model size) cell of a sweep."""
    model: str
    delta: int
    size: object  # tree count, or "cv" when chosen per region
    per_station: Dict[int, StationError]
    mae_bikes: float
    mae_bikes_unweighted: float
    mae_log: float
    n_rows: int

    @property
    def key(self):
        return self.model, self.delta, self.size


def check_weighted_mean(weighted, pooled, rel_tol=1e-9):
    """The row-weighted mean of station MAEs must equal the MAE over all rows."""
    if not abs(weighted - pooled) <= rel_tol * max(1.0, abs(pooled)):
        raise InvariantError(f"weighted station MAE {weighted!r} differs from pooled MAE {pooled!r}")


def mae_per_station(predictions, truths, station_ids, model="", delta=0, size=None) -> MaeCell:
    """Bike-scale and log-scale MAE per station plus the row-weighted aggregate."""
    predictions = np.asarray(predictions, dtype=float).ravel()
    truths = np.asarray(truths, dtype=float).ravel()
    station_ids = np.asarray(station_ids).ravel()
    if len(predictions) == 0:
        raise ValidationError("cannot compute MAE of zero predictions")
    if not len(predictions) == len(truths) == len(station_ids):
        raise ValidationError(
            f"length mismatch: {len(predictions)} predictions, {len(truths)} truths, "
            f"{len(station_ids)} station ids")

    frame = pd.DataFrame({
        "station_id": station_ids,
        "bikes": np.abs(inverse_target(predictions) - inverse_target(truths)),
        "log": np.abs(predictions - truths),
    })
    grouped = frame.groupby("station_id", sort=True).agg(
        mae_bikes=("bikes", "mean"), mae_log=("log", "mean"), n_rows=("bikes", "size"))
    per_station = {
        int(sid): StationError(float(row.mae_bikes), float(row.mae_log), int(row.n_rows))
        for sid, row in grouped.iterrows()
    }
    weights = grouped["n_rows"].to_numpy(dtype=float)
    mae_bikes = float(np.average(grouped["mae_bikes"], weights=weights))
    check_weighted_mean(mae_bikes, float(frame["bikes"].mean()))
    return MaeCell(
        model=model,
        delta=int(delta),
        size=size,
        per_station=per_station,
        mae_bikes=mae_bikes,
        mae_bikes_unweighted=float(grouped["mae_bikes"].mean()),
        mae_log=float(np.average(grouped["mae_log"], weights=weights)),
        n_rows=int(weights.sum()),
    )


@dataclass
class MaeReport:
    cells: List[MaeCell] = field(default_factory=list)
    skipped: List[Tuple[int, int, str]] = field(default_factory=list)  # (station or region, delta, reason)
    horizons: List[int] = field(default_factory=list)
    tree_counts: List[int] = field(default_factory=list)
    seed: Optional[int] = None
    fits: Dict[Tuple[str, int], int] = field(default_factory=dict)  # models trained per (model, delta)

    def add(self, cell: MaeCell):
        self.cells.append(cell)

    def cell(self, model, delta, size=None) -> MaeCell:
        for cell in self.cells:
            if cell.model == model and cell.delta == delta and (size is None or cell.size == size):
                return cell
        raise KeyError(f"no cell for {model} delta={delta} size={size}")

    def models(self):
        return sorted({cell.model for cell in self.cells})

    def merge(self, other: "MaeReport") -> "MaeReport":
        return MaeReport(
            self.cells + other.cells,
            self.skipped + other.skipped,
            sorted(set(self.horizons) | set(other.horizons)),
            sorted(set(self.tree_counts) | set(other.tree_counts)),
            self.seed if self.seed is not None else other.seed,
            {**self.fits, **other.fits},
        )

    def _sorted_cells(self):
        return sorted(self.cells, key=lambda c: (c.model, c.delta, str(c.size).zfill(8)))

    def rows_frame(self) -> pd.DataFrame:
        rows = []
        for cell in self._sorted_cells():
            for sid, err in sorted(cell.per_station.items()):
                size = err.size if err.size is not None else cell.size
                rows.append((cell.model, cell.delta, size, sid, err.mae_bikes, err.mae_log, err.n_rows))
        return pd.DataFrame(rows, columns=ROW_COLUMNS)

    def summary_frame(self) -> pd.DataFrame:
        rows = [
            (c.model, c.delta, c.size, c.mae_bikes, c.mae_bikes_unweighted, c.mae_log, c.n_rows,
             len(c.per_station))
            for c in self._sorted_cells()
        ]
        return pd.DataFrame(rows, columns=SUMMARY_COLUMNS)

    def skipped_frame(self) -> pd.DataFrame:
        return pd.DataFrame(sorted(self.skipped), columns=["unit_id", "delta_minutes", "reason"])

    def write(self, rows_filename, summary_filename, stamp=None):
        export_to_csv(self.rows_frame(), rows_filename, stamp)
        export_to_csv(self.summary_frame(), summary_filename, stamp)
        logger.info("wrote %d report cells", len(self.cells))


def report_from_summary(frame: pd.DataFrame) -> MaeReport:
    """Rebuild the aggregate cells of a report from its summary table."""
    report = MaeReport()
    for row in frame.itertuples(index=False):
        size = row.trees_or_components
        try:
            size = int(size)
        except (TypeError, ValueError):
            size = str(size)
        report.add(MaeCell(str(row.model), int(row.delta_minutes), size, {}, float(row.mae_bikes),
                           float(row.mae_bikes_unweighted), float(row.mae_log), int(row.n_test_rows)))
    report.horizons = sorted({cell.delta for cell in report.cells})
    return report
