"""Parsing of the four raw input files and change detection on status streams.

The raw files follow the public Bay Area Bike Share release: ``station.csv``,
``status.csv``, ``trip.csv`` and ``weather.csv``. Malformed lines are skipped
and counted rather than aborting the run.
"""

import bisect
import logging
import math
import re
from dataclasses import dataclass, field
from datetime import date, datetime
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from config import settings
from src.utils.data_processor import export_to_csv, read_exported_csv
from src.utils.errors import OrderingError, SchemaError, ValidationError

logger = logging.getLogger(__name__)

STATION_COLUMNS = ["id", "name", "lat", "long", "dock_count", "city"]
STATUS_COLUMNS = ["station_id", "bikes_available", "docks_available", "time"]
TRIP_COLUMNS = ["id", "duration", "start_date", "start_station_id", "end_date", "end_station_id"]
WEATHER_COLUMNS = [
    "date",
    "mean_temperature_f",
    "mean_humidity",
    "mean_visibility_miles",
    "mean_wind_speed_mph",
    "precipitation_inches",
    "events",
    "zip_code",
]
WEATHER_VALUE_FIELDS = [
    "mean_temperature",
    "mean_humidity",
    "mean_visibility",
    "mean_wind_speed",
    "precipitation",
]

# Lower-cased, dash-joined labels seen in the public release
_EVENT_ALIASES = {
    "": "none",
    "none": "none",
    "fog": "fog",
    "rain": "rain",
    "fog-rain": "fog_rain",
    "rain-fog": "fog_rain",
    "thunderstorm": "thunderstorm",
    "rain-thunderstorm": "thunderstorm",
    "fog-rain-thunderstorm": "thunderstorm",
    "other": "other",
}
_EVENT_LABELS = {
    "none": "",
    "fog": "Fog",
    "rain": "Rain",
    "fog_rain": "Fog-Rain",
    "thunderstorm": "Thunderstorm",
    "other": "Other",
}
STATUS_CHUNK_ROWS = 1_000_000


@dataclass(frozen=True)
class StationMeta:
    station_id: int
    name: str
    latitude: float
    longitude: float
    dock_count: int
    city: str
    zip_code: str


@dataclass(frozen=True)
class StatusSnapshot:
    station_id: int
    bikes_available: int
    docks_available: int
    timestamp: datetime


@dataclass(frozen=True)
class TripRecord:
    trip_id: int
    duration_seconds: int
    start_time: datetime
    end_time: datetime
    start_station_id: int
    end_station_id: int


@dataclass(frozen=True)
class DailyWeather:
    date: date
    zip_code: str
    mean_temperature: float  # degrees F
    mean_humidity: float  # percent
    mean_visibility: float  # miles
    mean_wind_speed: float  # mph
    precipitation: float  # inches
    event: str

    @property
    def complete(self):
        return all(math.isfinite(getattr(self, name)) for name in WEATHER_VALUE_FIELDS)


@dataclass(frozen=True)
class ChangeEvent:
    station_id: int
    timestamp: datetime
    bikes_available: int


@dataclass
class ParseResult:
    """Records of one input file plus the bookkeeping of what was dropped."""
    records: Any
    skipped: int = 0
    unknown_events: int = 0
    unresolved: int = 0

    def __len__(self):
        return len(self.records)


class _BadLineCounter:
    def __init__(self):
        self.count = 0

    def __call__(self, line):
        self.count += 1
        return None


def _read_table(source, required, name):
    counter = _BadLineCounter()
    try:
        frame = pd.read_csv(
            source,
            dtype=str,
            keep_default_na=False,
            skipinitialspace=True,
            engine="python",
            on_bad_lines=counter,
        )
    except pd.errors.EmptyDataError:
        raise SchemaError(required[0], name)
    frame.columns = [str(column).strip() for column in frame.columns]
    for column in required:
        if column not in frame.columns:
            raise SchemaError(column, name)
    return frame.fillna(""), counter.count


def _to_number(series):
    return pd.to_numeric(series.str.strip(), errors="coerce")


def _is_whole(values):
    return values.notna() & (values == values.round())


def parse_stations(source) -> ParseResult:
    """Parse station metadata; returns StationMeta records and the skip count."""
    frame, bad_lines = _read_table(source, STATION_COLUMNS, "station file")
    ids = _to_number(frame["id"])
    lat = _to_number(frame["lat"])
    lon = _to_number(frame["long"])
    docks = _to_number(frame["dock_count"])
    valid = _is_whole(ids) & lat.notna() & lon.notna() & _is_whole(docks) & (docks >= 0)

    has_zip = "zip_code" in frame.columns
    records = []
    unknown_cities = set()
    for row in np.flatnonzero(valid.to_numpy()):
        city = frame["city"].iat[row].strip()
        zip_code = frame["zip_code"].iat[row].strip() if has_zip else ""
        if not zip_code:
            zip_code = settings.CITY_ZIP_CODES.get(city, "")
            if not zip_code:
                unknown_cities.add(city)
        records.append(StationMeta(
            station_id=int(ids.iat[row]),
            name=frame["name"].iat[row].strip(),
            latitude=float(lat.iat[row]),
            longitude=float(lon.iat[row]),
            dock_count=int(docks.iat[row]),
            city=city,
            zip_code=zip_code,
        ))

    seen = set()
    for record in records:
        if record.station_id in seen:
            raise ValidationError(f"duplicate station_id {record.station_id} in station file")
        seen.add(record.station_id)

    skipped = int((~valid).sum()) + bad_lines
    if skipped:
        logger.warning("station file: skipped %d malformed lines", skipped)
    if unknown_cities:
        logger.warning("no ZIP code known for cities %s", sorted(unknown_cities))
    return ParseResult(records=records, skipped=skipped)


def normalize_event(label) -> Optional[str]:
    """Map a raw event label onto the fixed taxonomy; None when unrecognised."""
    key = re.sub(r"[\s_\-]+", "-", str(label).strip().lower()).strip("-")
    return _EVENT_ALIASES.get(key)


def parse_weather(source) -> ParseResult:
    """Parse daily weather, keeping the six selected variables and the event."""
    frame, bad_lines = _read_table(source, WEATHER_COLUMNS, "weather file")
    dates = pd.to_datetime(frame["date"].str.strip(), format="%m/%d/%Y", errors="coerce")

    precip_raw = frame["precipitation_inches"].str.strip()
    precipitation = _to_number(precip_raw).mask(
        precip_raw.str.upper() == "T", settings.TRACE_PRECIPITATION)
    values = {
        "mean_temperature": _to_number(frame["mean_temperature_f"]),
        "mean_humidity": _to_number(frame["mean_humidity"]),
        "mean_visibility": _to_number(frame["mean_visibility_miles"]),
        "mean_wind_speed": _to_number(frame["mean_wind_speed_mph"]),
        "precipitation": precipitation,
    }
    # Blank numeric fields stay absent (NaN); out-of-range ones are malformed
    humidity = values["mean_humidity"]
    valid = dates.notna()
    valid &= humidity.isna() | humidity.between(0, 100)
    valid &= precipitation.isna() | (precipitation >= 0)

    records = []
    unknown = 0
    seen = set()
    duplicates = 0
    for row in np.flatnonzero(valid.to_numpy()):
        zip_code = frame["zip_code"].iat[row].strip()
        day = dates.iat[row].date()
        if (day, zip_code) in seen:
            duplicates += 1
            continue
        seen.add((day, zip_code))
        event = normalize_event(frame["events"].iat[row])
        if event is None:
            unknown += 1
            event = "other"
        records.append(DailyWeather(
            date=day,
            zip_code=zip_code,
            event=event,
            **{name: float(series.iat[row]) for name, series in values.items()},
        ))

    skipped = int((~valid).sum()) + bad_lines + duplicates
    if skipped:
        logger.warning("weather file: skipped %d lines (%d duplicates)", skipped, duplicates)
    if unknown:
        logger.warning("weather file: %d unknown event labels mapped to 'other'", unknown)
    return ParseResult(records=records, skipped=skipped, unknown_events=unknown)


def _parse_times(series):
    times = pd.to_datetime(series.str.strip(), errors="coerce")
    return times.dt.floor("min")


def parse_status(source, chunk_rows=STATUS_CHUNK_ROWS) -> ParseResult:
    """Parse the minute-level status file into a columnar table.

    The result's ``records`` is a frame with columns station_id,
    bikes_available, docks_available and time, sorted by station then time.
    """
    chunks = []
    skipped = 0
    counter = _BadLineCounter()
    try:
        reader = pd.read_csv(
            source,
            dtype=str,
            keep_default_na=False,
            skipinitialspace=True,
            engine="python",
            on_bad_lines=counter,
            chunksize=chunk_rows,
        )
        for chunk in reader:
            chunk.columns = [str(column).strip() for column in chunk.columns]
            for column in STATUS_COLUMNS:
                if column not in chunk.columns:
                    raise SchemaError(column, "status file")
            parsed = pd.DataFrame({
                "station_id": _to_number(chunk["station_id"]),
                "bikes_available": _to_number(chunk["bikes_available"]),
                "docks_available": _to_number(chunk["docks_available"]),
                "time": _parse_times(chunk["time"]),
            })
            valid = parsed["time"].notna()
            for column in ("station_id", "bikes_available", "docks_available"):
                valid &= _is_whole(parsed[column])
            valid &= (parsed["bikes_available"] >= 0) & (parsed["docks_available"] >= 0)
            skipped += int((~valid).sum())
            chunks.append(parsed[valid])
    except pd.errors.EmptyDataError:
        raise SchemaError(STATUS_COLUMNS[0], "status file")
    skipped += counter.count

    if chunks:
        status = pd.concat(chunks, ignore_index=True)
    else:
        status = pd.DataFrame({column: [] for column in STATUS_COLUMNS})
    status = status.astype({
        "station_id": "int64",
        "bikes_available": "int64",
        "docks_available": "int64",
        "time": "datetime64[ns]",
    })
    status = status.sort_values(["station_id", "time"], kind="mergesort").reset_index(drop=True)
    if skipped:
        logger.warning("status file: skipped %d malformed lines", skipped)
    logger.info("parsed %d status snapshots for %d stations",
                len(status), status["station_id"].nunique())
    return ParseResult(records=status, skipped=skipped)


def iter_snapshots(status, station_id) -> List[StatusSnapshot]:
    part = status[status["station_id"] == station_id]
    return [
        StatusSnapshot(int(sid), int(bikes), int(docks), ts.to_pydatetime())
        for sid, bikes, docks, ts in zip(
            part["station_id"], part["bikes_available"], part["docks_available"], part["time"]
        )
    ]


def check_capacity(status, stations: Sequence[StationMeta]) -> int:
    """Count snapshots whose bikes + docks exceed the station's dock count."""
    capacity = pd.Series({s.station_id: s.dock_count for s in stations}, dtype="float64")
    limits = status["station_id"].map(capacity)
    over = (status["bikes_available"] + status["docks_available"]) > limits
    violations = int(over.sum())
    if violations:
        logger.warning("%d snapshots exceed station dock capacity (kept)", violations)
    return violations


def parse_trips(source, stations: Sequence[StationMeta]) -> ParseResult:
    """Parse trips; trips whose stations are not in the metadata are dropped."""
    frame, bad_lines = _read_table(source, TRIP_COLUMNS, "trip file")
    ids = _to_number(frame["id"])
    duration = _to_number(frame["duration"])
    start_station = _to_number(frame["start_station_id"])
    end_station = _to_number(frame["end_station_id"])
    start = _parse_times(frame["start_date"])
    end = _parse_times(frame["end_date"])
    valid = (_is_whole(ids) & _is_whole(duration) & (duration > 0)
             & _is_whole(start_station) & _is_whole(end_station)
             & start.notna() & end.notna())

    known = {s.station_id for s in stations}
    resolved = start_station.isin(known) & end_station.isin(known)
    unresolved = int((valid & ~resolved).sum())
    keep = np.flatnonzero((valid & resolved).to_numpy())

    records = [
        TripRecord(
            trip_id=int(ids.iat[row]),
            duration_seconds=int(duration.iat[row]),
            start_time=start.iat[row].to_pydatetime(),
            end_time=end.iat[row].to_pydatetime(),
            start_station_id=int(start_station.iat[row]),
            end_station_id=int(end_station.iat[row]),
        )
        for row in keep
    ]
    skipped = int((~valid).sum()) + bad_lines
    if skipped:
        logger.warning("trip file: skipped %d malformed lines", skipped)
    if unresolved:
        logger.warning("trip file: dropped %d trips with unknown stations", unresolved)
    return ParseResult(records=records, skipped=skipped, unresolved=unresolved)


def detect_changes(snapshots: Sequence[StatusSnapshot]) -> List[ChangeEvent]:
    """Keep the first snapshot and every snapshot whose bike count changed."""
    events: List[ChangeEvent] = []
    previous = None
    for snapshot in snapshots:
        if previous is not None:
            if snapshot.station_id != previous.station_id:
                raise ValidationError("detect_changes expects snapshots of a single station")
            if snapshot.timestamp < previous.timestamp:
                raise OrderingError(
                    f"snapshot at {snapshot.timestamp} follows {previous.timestamp} "
                    f"for station {snapshot.station_id}"
                )
        if not events or snapshot.bikes_available != events[-1].bikes_available:
            events.append(ChangeEvent(snapshot.station_id, snapshot.timestamp, snapshot.bikes_available))
        previous = snapshot
    return events


def stock_at(events: Sequence[ChangeEvent], t: datetime) -> Optional[int]:
    """Bikes at ``t`` by last observation carried forward; None before the first event."""
    times = [event.timestamp for event in events]
    index = bisect.bisect_right(times, t) - 1
    if index < 0:
        return None
    return events[index].bikes_available


def _as_minutes(values):
    return np.asarray(values, dtype="datetime64[m]")


@dataclass
class StationEvents:
    """Change events of one station held as parallel numpy arrays."""
    station_id: int
    times: np.ndarray  # datetime64[m], ascending
    bikes: np.ndarray  # int64

    def __len__(self):
        return len(self.times)

    def stock_at(self, t) -> Optional[int]:
        index = int(np.searchsorted(self.times, np.datetime64(t, "m"), side="right")) - 1
        return None if index < 0 else int(self.bikes[index])

    def stock_at_many(self, times) -> Tuple[np.ndarray, np.ndarray]:
        """Vectorised LOCF lookup; returns (values, defined mask)."""
        index = np.searchsorted(self.times, _as_minutes(times), side="right") - 1
        defined = index >= 0
        values = np.zeros(len(index), dtype=np.int64)
        values[defined] = self.bikes[index[defined]]
        return values, defined

    def to_events(self) -> List[ChangeEvent]:
        return [
            ChangeEvent(self.station_id, t.astype(datetime), int(b))
            for t, b in zip(self.times, self.bikes)
        ]


@dataclass
class EventStore:
    """Change events for every station plus the raw observation window."""
    series: Dict[int, StationEvents]
    span_start: Optional[np.datetime64] = None
    span_end: Optional[np.datetime64] = None

    def __post_init__(self):
        if self.series and (self.span_start is None or self.span_end is None):
            starts = [s.times[0] for s in self.series.values() if len(s)]
            ends = [s.times[-1] for s in self.series.values() if len(s)]
            if self.span_start is None:
                self.span_start = min(starts)
            if self.span_end is None:
                self.span_end = max(ends)
        if self.span_start is not None:
            self.span_start = np.datetime64(self.span_start, "m")
            self.span_end = np.datetime64(self.span_end, "m")

    def __getitem__(self, station_id) -> StationEvents:
        return self.series[station_id]

    def __contains__(self, station_id):
        return station_id in self.series

    @property
    def station_ids(self):
        return sorted(self.series)

    @property
    def n_events(self):
        return sum(len(s) for s in self.series.values())

    @classmethod
    def from_events(cls, events: Iterable[ChangeEvent], span_start=None, span_end=None):
        grouped: Dict[int, List[ChangeEvent]] = {}
        for event in events:
            grouped.setdefault(event.station_id, []).append(event)
        series = {
            sid: StationEvents(
                sid,
                _as_minutes([e.timestamp for e in items]),
                np.array([e.bikes_available for e in items], dtype=np.int64),
            )
            for sid, items in grouped.items()
        }
        return cls(series, span_start, span_end)


def compress_status(status) -> EventStore:
    """Change detection over the whole status table at once.

    Equivalent to running ``detect_changes`` per station: a snapshot differs
    from the last emitted value exactly when it differs from its predecessor.
    """
    station = status["station_id"].to_numpy()
    bikes = status["bikes_available"].to_numpy()
    times = status["time"].to_numpy().astype("datetime64[m]")
    if len(station) == 0:
        return EventStore({})
    new_station = np.r_[True, station[1:] != station[:-1]]
    if np.any((times[1:] < times[:-1]) & ~new_station[1:]):
        raise OrderingError("status table is not sorted by station and time")
    keep = new_station | np.r_[True, bikes[1:] != bikes[:-1]]

    kept_station = station[keep]
    boundaries = np.flatnonzero(np.r_[True, kept_station[1:] != kept_station[:-1]])
    ends = np.r_[boundaries[1:], len(kept_station)]
    kept_times = times[keep]
    kept_bikes = bikes[keep].astype(np.int64)
    series = {
        int(kept_station[lo]): StationEvents(int(kept_station[lo]), kept_times[lo:hi], kept_bikes[lo:hi])
        for lo, hi in zip(boundaries, ends)
    }
    store = EventStore(series, times.min(), times.max())
    logger.info("change detection kept %d of %d snapshots", store.n_events, len(station))
    return store


def write_events(store: EventStore, filename, stamp=None):
    frames = [
        pd.DataFrame({
            "station_id": s.station_id,
            "timestamp": pd.to_datetime(s.times).strftime("%Y-%m-%d %H:%M"),
            "bikes_available": s.bikes,
        })
        for _, s in sorted(store.series.items())
    ]
    frame = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(
        columns=["station_id", "timestamp", "bikes_available"])
    return export_to_csv(frame, filename, stamp)


def read_events(filename, span_start=None, span_end=None) -> EventStore:
    frame = read_exported_csv(filename)
    for column in ("station_id", "timestamp", "bikes_available"):
        if column not in frame.columns:
            raise SchemaError(column, str(filename))
    frame["timestamp"] = pd.to_datetime(frame["timestamp"], format="%Y-%m-%d %H:%M")
    series = {}
    for sid, part in frame.groupby("station_id", sort=True):
        series[int(sid)] = StationEvents(
            int(sid),
            part["timestamp"].to_numpy().astype("datetime64[m]"),
            part["bikes_available"].to_numpy(dtype=np.int64),
        )
    return EventStore(series, span_start, span_end)


def write_stations(stations: Sequence[StationMeta], filename, stamp=None):
    frame = pd.DataFrame({
        "id": [s.station_id for s in stations],
        "name": [s.name for s in stations],
        "lat": [s.latitude for s in stations],
        "long": [s.longitude for s in stations],
        "dock_count": [s.dock_count for s in stations],
        "city": [s.city for s in stations],
        "zip_code": [s.zip_code for s in stations],
    }, columns=STATION_COLUMNS + ["zip_code"])
    return export_to_csv(frame, filename, stamp, float_format=None)


def write_weather(records: Sequence[DailyWeather], filename, stamp=None):
    """Write the retained weather fields in the input schema."""
    frame = pd.DataFrame({
        "date": [f"{w.date.month}/{w.date.day}/{w.date.year}" for w in records],
        "mean_temperature_f": [w.mean_temperature for w in records],
        "mean_humidity": [w.mean_humidity for w in records],
        "mean_visibility_miles": [w.mean_visibility for w in records],
        "mean_wind_speed_mph": [w.mean_wind_speed for w in records],
        "precipitation_inches": [w.precipitation for w in records],
        "events": [_EVENT_LABELS[w.event] for w in records],
        "zip_code": [w.zip_code for w in records],
    }, columns=WEATHER_COLUMNS)
    return export_to_csv(frame, filename, stamp, float_format=None)


@dataclass
class IngestSummary:
    stations: int = 0
    snapshots: int = 0
    events: int = 0
    trips: int = 0
    weather_days: int = 0
    skipped: Dict[str, int] = field(default_factory=dict)
    capacity_violations: int = 0
    unknown_events: int = 0
    unresolved_trips: int = 0
    span_start: str = ""
    span_end: str = ""

    def to_dict(self):
        return {
            "stations": self.stations,
            "snapshots": self.snapshots,
            "events": self.events,
            "trips": self.trips,
            "weather_days": self.weather_days,
            "skipped": dict(sorted(self.skipped.items())),
            "capacity_violations": self.capacity_violations,
            "unknown_events": self.unknown_events,
            "unresolved_trips": self.unresolved_trips,
            "span_start": self.span_start,
            "span_end": self.span_end,
        }
