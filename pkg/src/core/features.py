"""Predictor vectors and log-scale targets on a regular time grid.

A station's predictors at grid instant t are its own stock, the stocks of its
k in-degree neighbours, the calendar (month, day of week, minute of day) and
the day's weather at the station's ZIP code. The target is log1p of the
station's stock at t + delta.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from datetime import date, datetime
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from config import settings
from src.core.graph import NeighborSet
from src.core.ingest import WEATHER_VALUE_FIELDS, DailyWeather, EventStore
from src.utils.data_processor import export_to_csv, export_to_json
from src.utils.errors import DegenerateSplitError, LookupFailure, ValidationError

logger = logging.getLogger(__name__)

NUMERIC = "numeric"
ORDINAL_CALENDAR = "ordinal-calendar"
ONE_HOT = "one-hot-categorical"
CALENDAR_FEATURES = ["month", "day_of_week", "time_of_day"]


@dataclass(frozen=True)
class EncodingSchema:
    feature_names: Tuple[str, ...]
    kinds: Tuple[str, ...]
    target_names: Tuple[str, ...]
    target_transform: str = "log1p"

    @property
    def width(self):
        return len(self.feature_names)

    @property
    def one_hot_events(self):
        return "event_none" in self.feature_names

    def to_dict(self):
        return {
            "feature_names": list(self.feature_names),
            "kinds": list(self.kinds),
            "target_names": list(self.target_names),
            "target_transform": self.target_transform,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data):
        return cls(tuple(data["feature_names"]), tuple(data["kinds"]),
                   tuple(data["target_names"]), data.get("target_transform", "log1p"))


def _context_columns(one_hot_events):
    names = list(CALENDAR_FEATURES) + list(WEATHER_VALUE_FIELDS)
    kinds = [ORDINAL_CALENDAR] * len(CALENDAR_FEATURES) + [NUMERIC] * len(WEATHER_VALUE_FIELDS)
    if one_hot_events:
        names += [f"event_{event}" for event in settings.WEATHER_EVENTS]
        kinds += [ONE_HOT] * len(settings.WEATHER_EVENTS)
    else:
        names.append("event")
        kinds.append(ORDINAL_CALENDAR)
    return names, kinds


def station_schema(k, one_hot_events=False) -> EncodingSchema:
    stock_names = ["own_stock"] + [f"neighbor_{rank}" for rank in range(1, k + 1)]
    context_names, context_kinds = _context_columns(one_hot_events)
    return EncodingSchema(
        tuple(stock_names + context_names),
        tuple([NUMERIC] * len(stock_names) + context_kinds),
        ("target",),
    )


def region_schema(stock_stations, target_stations, one_hot_events=True) -> EncodingSchema:
    stock_names = [f"stock_{sid}" for sid in stock_stations]
    context_names, context_kinds = _context_columns(one_hot_events)
    return EncodingSchema(
        tuple(stock_names + context_names),
        tuple([NUMERIC] * len(stock_names) + context_kinds),
        tuple(f"target_{sid}" for sid in target_stations),
    )


@dataclass(frozen=True)
class FeatureRow:
    station_id: int
    time: datetime
    own_stock: int
    neighbor_stocks: Tuple[int, ...]
    month: int
    day_of_week: int  # 1 = Monday
    time_of_day: int  # minutes since midnight
    weather: Optional[Tuple[float, float, float, float, float, str]]
    target: float
    target_time: datetime
    weather_missing: bool = False


class WeatherTable:
    """Daily weather indexed by (date, ZIP code)."""

    def __init__(self, records: Sequence[DailyWeather]):
        self.records: Dict[Tuple[date, str], DailyWeather] = {(w.date, w.zip_code): w for w in records}

    def __len__(self):
        return len(self.records)

    def lookup(self, days: Sequence[date], zip_code):
        """Weather values (n, 5), event codes (n,) and a missing mask for each day."""
        codes = {event: i for i, event in enumerate(settings.WEATHER_EVENTS)}
        values = np.full((len(days), len(WEATHER_VALUE_FIELDS)), np.nan)
        events = np.full(len(days), -1, dtype=np.int64)
        cache: Dict[date, Optional[DailyWeather]] = {}
        for row, day in enumerate(days):
            if day not in cache:
                cache[day] = self.records.get((day, zip_code))
            record = cache[day]
            if record is not None:
                values[row] = [getattr(record, name) for name in WEATHER_VALUE_FIELDS]
                events[row] = codes[record.event]
        missing = np.isnan(values).any(axis=1) | (events < 0)
        return values, events, missing


@dataclass
class DesignMatrix:
    """Feature matrix, target(s) and per-row bookkeeping for one horizon."""
    X: np.ndarray
    y: np.ndarray
    times: np.ndarray  # datetime64[m]
    station_ids: np.ndarray
    delta: int
    schema: EncodingSchema
    weather_missing: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.weather_missing is None:
            self.weather_missing = np.zeros(len(self.times), dtype=bool)
        if self.X.shape[1] != self.schema.width:
            raise ValidationError(
                f"design matrix has {self.X.shape[1]} columns, schema declares {self.schema.width}")

    def __len__(self):
        return len(self.times)

    @property
    def target_times(self):
        return self.times + np.timedelta64(self.delta, "m")

    @property
    def multivariate(self):
        return self.y.ndim == 2

    def subset(self, index) -> "DesignMatrix":
        return DesignMatrix(self.X[index], self.y[index], self.times[index], self.station_ids[index],
                            self.delta, self.schema, self.weather_missing[index])

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.X, columns=list(self.schema.feature_names))
        targets = self.y.reshape(len(self), -1)
        for column, name in enumerate(self.schema.target_names):
            frame[name] = targets[:, column]
        frame.insert(0, "station_id", self.station_ids)
        frame.insert(0, "time", pd.to_datetime(self.times).strftime("%Y-%m-%d %H:%M"))
        return frame

    def rows(self) -> List[FeatureRow]:
        if self.multivariate:
            raise ValidationError("FeatureRow view is only defined for single-station matrices")
        names = list(self.schema.feature_names)
        k = sum(1 for name in names if name.startswith("neighbor_"))
        col = {name: i for i, name in enumerate(names)}
        event_names = settings.WEATHER_EVENTS
        result = []
        for r in range(len(self)):
            x = self.X[r]
            if self.weather_missing[r]:
                weather = None
            else:
                if self.schema.one_hot_events:
                    onehot = [x[col[f"event_{e}"]] for e in event_names]
                    event = event_names[int(np.argmax(onehot))]
                else:
                    event = event_names[int(x[col["event"]])]
                weather = tuple(float(x[col[name]]) for name in WEATHER_VALUE_FIELDS) + (event,)
            result.append(FeatureRow(
                station_id=int(self.station_ids[r]),
                time=self.times[r].astype(datetime),
                own_stock=int(x[0]),
                neighbor_stocks=tuple(int(v) for v in x[1:1 + k]),
                month=int(x[col["month"]]),
                day_of_week=int(x[col["day_of_week"]]),
                time_of_day=int(x[col["time_of_day"]]),
                weather=weather,
                target=float(self.y[r]),
                target_time=self.target_times[r].astype(datetime),
                weather_missing=bool(self.weather_missing[r]),
            ))
        return result

    @classmethod
    def from_rows(cls, rows: Sequence[FeatureRow], schema: EncodingSchema, delta) -> "DesignMatrix":
        one_hot = schema.one_hot_events
        codes = {event: i for i, event in enumerate(settings.WEATHER_EVENTS)}
        matrix = []
        for row in rows:
            values = [row.own_stock, *row.neighbor_stocks, row.month, row.day_of_week, row.time_of_day]
            if row.weather is None:
                values += [np.nan] * (len(WEATHER_VALUE_FIELDS) + (len(codes) if one_hot else 1))
            else:
                values += list(row.weather[:-1])
                if one_hot:
                    values += [1.0 if codes[row.weather[-1]] == i else 0.0 for i in range(len(codes))]
                else:
                    values.append(codes[row.weather[-1]])
            matrix.append(values)
        X = np.asarray(matrix, dtype=float).reshape(len(rows), schema.width)
        return cls(
            X,
            np.array([row.target for row in rows], dtype=float),
            np.array([row.time for row in rows], dtype="datetime64[m]"),
            np.array([row.station_id for row in rows], dtype=np.int64),
            int(delta),
            schema,
            np.array([row.weather_missing for row in rows], dtype=bool),
        )


@dataclass
class DatasetSplit:
    train: DesignMatrix
    test: DesignMatrix
    split_time: np.datetime64
    leakage_dropped: int = 0


def grid_times(span_start, span_end, grid_step) -> np.ndarray:
    """Grid instants aligned to multiples of ``grid_step`` minutes after midnight."""
    start = np.datetime64(span_start, "m")
    end = np.datetime64(span_end, "m")
    day = start.astype("datetime64[D]").astype("datetime64[m]")
    offset = int((start - day) / np.timedelta64(1, "m"))
    first = day + np.timedelta64(-(-offset // grid_step) * grid_step, "m")
    if first > end:
        return np.array([], dtype="datetime64[m]")
    return np.arange(first, end + np.timedelta64(1, "m"), np.timedelta64(grid_step, "m"))


def log1p_target(stock):
    return np.log1p(np.asarray(stock, dtype=float))


def inverse_target(z):
    """Back to bikes: exp(z) - 1, floored at zero."""
    result = np.maximum(np.expm1(np.asarray(z, dtype=float)), 0.0)
    return float(result) if result.ndim == 0 else result


def _calendar(times):
    index = pd.DatetimeIndex(times)
    return np.column_stack([
        index.month.to_numpy(),
        index.dayofweek.to_numpy() + 1,
        index.hour.to_numpy() * 60 + index.minute.to_numpy(),
    ]).astype(float)


def _check_horizon(grid_step, delta):
    if grid_step <= 0:
        raise ValidationError(f"grid_step must be positive, got {grid_step}")
    if delta <= 0:
        raise ValidationError(f"delta must be positive, got {delta}")


def _assemble(events: EventStore, weather: WeatherTable, stock_stations, target_stations,
              zip_code, grid_step, delta, schema, include_missing_weather):
    grid = grid_times(events.span_start, events.span_end, grid_step)
    horizon = grid + np.timedelta64(delta, "m")
    valid = horizon <= events.span_end

    stocks = []
    for sid in stock_stations:
        values, defined = events[sid].stock_at_many(grid) if sid in events else (
            np.zeros(len(grid), dtype=np.int64), np.zeros(len(grid), dtype=bool))
        stocks.append(values)
        valid &= defined
    targets = []
    for sid in target_stations:
        values, defined = events[sid].stock_at_many(horizon)
        targets.append(values)
        valid &= defined

    days = pd.DatetimeIndex(grid).date
    weather_values, event_codes, missing = weather.lookup(days, zip_code)
    if not include_missing_weather:
        valid &= ~missing

    keep = np.flatnonzero(valid)
    grid = grid[keep]
    if schema.one_hot_events:
        event_block = np.zeros((len(keep), len(settings.WEATHER_EVENTS)))
        codes = event_codes[keep]
        known = codes >= 0
        event_block[np.flatnonzero(known), codes[known]] = 1.0
        event_block[~known] = np.nan
    else:
        event_block = event_codes[keep].astype(float).reshape(-1, 1)
        event_block[event_block < 0] = np.nan

    X = np.column_stack(
        [np.asarray(stocks, dtype=float).reshape(len(stock_stations), -1)[:, keep].T,
         _calendar(grid), weather_values[keep], event_block]
    ) if len(keep) else np.empty((0, schema.width))
    Y = log1p_target(np.asarray(targets).reshape(len(target_stations), -1)[:, keep].T)
    return grid, X, Y, missing[keep]


def build_station_matrix(events: EventStore, weather: WeatherTable, neighbors: NeighborSet, station_id,
                         grid_step=settings.GRID_STEP_MINUTES, delta=15, zip_code="",
                         one_hot_events=False, include_missing_weather=False) -> DesignMatrix:
    """Vectorised form of ``build_rows`` for one station."""
    _check_horizon(grid_step, delta)
    if station_id not in events:
        raise LookupFailure(f"no change events for station {station_id}")
    if neighbors.station_id != station_id:
        raise ValidationError(f"neighbour set belongs to station {neighbors.station_id}, not {station_id}")
    absent = [sid for sid in neighbors.neighbors if sid not in events]
    if absent:
        logger.warning("station %s: neighbours %s have no events; no rows can be built", station_id, absent)

    schema = station_schema(len(neighbors.neighbors), one_hot_events)
    grid, X, Y, missing = _assemble(
        events, weather, [station_id, *neighbors.neighbors], [station_id],
        zip_code, grid_step, delta, schema, include_missing_weather,
    )
    logger.debug("station %s delta %d: %d rows", station_id, delta, len(grid))
    return DesignMatrix(X, Y[:, 0], grid, np.full(len(grid), station_id, dtype=np.int64),
                        int(delta), schema, missing)


def build_rows(events: EventStore, weather: WeatherTable, neighbors: NeighborSet, station_id,
               grid_step=settings.GRID_STEP_MINUTES, delta=15, zip_code="",
               include_missing_weather=False) -> List[FeatureRow]:
    return build_station_matrix(
        events, weather, neighbors, station_id, grid_step, delta, zip_code,
        include_missing_weather=include_missing_weather,
    ).rows()


def region_stock_stations(region, neighbors: Dict[int, NeighborSet]) -> List[int]:
    """Each region station followed by its neighbours, first occurrence kept."""
    ordered = []
    seen = set()
    for sid in sorted(region):
        for member in (sid, *neighbors[sid].neighbors):
            if member not in seen:
                seen.add(member)
                ordered.append(member)
    return ordered


def build_region_rows(events: EventStore, weather: WeatherTable, region, neighbors: Dict[int, NeighborSet],
                      grid_step=settings.GRID_STEP_MINUTES, delta=15, zip_code="",
                      include_missing_weather=False) -> DesignMatrix:
    """Shared predictor block and one log1p target column per region station."""
    _check_horizon(grid_step, delta)
    if not region:
        raise ValidationError("region is empty")
    targets = sorted(region)
    for sid in targets:
        if sid not in events:
            raise LookupFailure(f"no change events for station {sid}")
    stock = region_stock_stations(region, neighbors)
    schema = region_schema(stock, targets, one_hot_events=True)
    grid, X, Y, missing = _assemble(events, weather, stock, targets, zip_code,
                                    grid_step, delta, schema, include_missing_weather)
    return DesignMatrix(X, Y, grid, np.full(len(grid), -1, dtype=np.int64), int(delta), schema, missing)


def chronological_split(design: DesignMatrix, train_fraction=settings.TRAIN_FRACTION) -> DatasetSplit:
    """Earliest rows train, latest rows test; train rows whose target reaches
    the test period are dropped."""
    n = len(design)
    if n == 0:
        raise ValidationError("cannot split an empty design matrix")
    if not 0 < train_fraction < 1:
        raise ValidationError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    order = np.argsort(design.times, kind="mergesort")
    times = design.times[order]
    if times[0] == times[-1]:
        raise DegenerateSplitError("all rows share one instant; no chronological split exists")

    n_train = min(max(math.ceil(round(train_fraction * n, 9)), 1), n - 1)
    split_time = times[n_train]
    if split_time == times[0]:
        split_time = times[times > times[0]][0]

    in_train = design.times[order] < split_time
    leaks = in_train & (design.target_times[order] >= split_time)
    train = design.subset(order[in_train & ~leaks])
    test = design.subset(order[~in_train])
    if leaks.any():
        logger.debug("dropped %d train rows whose target crosses %s", int(leaks.sum()), split_time)
    return DatasetSplit(train, test, split_time, int(leaks.sum()))


def export_design(design: DesignMatrix, filename, schema_filename=None, stamp=None):
    path = export_to_csv(design.to_frame(), filename, stamp)
    if schema_filename is not None:
        export_to_json(design.schema.to_dict(), schema_filename, stamp)
    return path
