"""Seeded bike-share simulator producing the four raw input files.

Stations sit in regions with their own ZIP code. Riders leave a station at a
diurnal Poisson rate, mostly towards stations of the same region, and dock at
the destination once a dock is free. Every bike is either docked or on a trip,
so the fleet size never changes.
"""

import heapq
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List

import numpy as np
import pandas as pd

from config import settings
from src.utils.errors import ValidationError

logger = logging.getLogger(__name__)

_CITIES = list(settings.CITY_ZIP_CODES.items())


@dataclass(frozen=True)
class SyntheticConfig:
    n_stations: int = 10
    n_regions: int = 2
    min_docks: int = 11
    max_docks: int = 23
    span_days: int = 14
    start_date: str = "2015-03-02"
    status_step_minutes: int = 1
    trips_per_station_hour: float = 2.0
    intra_region_preference: float = 0.999
    commute_bias: float = 0.8  # pull of work stations in the morning, home stations in the evening
    min_trip_minutes: int = 3
    max_trip_minutes: int = 30
    rain_probability: float = 0.15
    fog_probability: float = 0.1
    rain_rate_factor: float = 0.6
    drain_minutes: int = 120
    seed: int = settings.SEED

    def __post_init__(self):
        if self.n_stations < 1:
            raise ValidationError("n_stations must be positive")
        if not 1 <= self.n_regions <= self.n_stations:
            raise ValidationError(f"n_regions must lie in [1, {self.n_stations}], got {self.n_regions}")
        if self.min_docks < 1 or self.max_docks < self.min_docks:
            raise ValidationError(
                f"dock capacity range [{self.min_docks}, {self.max_docks}] is infeasible")
        if not 0.5 < self.intra_region_preference <= 1:
            raise ValidationError("intra_region_preference must lie in (0.5, 1]")
        if self.span_days < 1 or self.status_step_minutes < 1:
            raise ValidationError("span_days and status_step_minutes must be positive")
        if not 1 <= self.min_trip_minutes <= self.max_trip_minutes:
            raise ValidationError("trip duration range is infeasible")


@dataclass
class SyntheticBundle:
    station_path: Path
    status_path: Path
    trip_path: Path
    weather_path: Path
    regions: List[List[int]]
    fleet_trace: np.ndarray = field(repr=False)
    n_trips: int = 0


def _diurnal(hour):
    return (0.25
            + 1.3 * np.exp(-((hour - 8.5) / 1.2) ** 2)
            + 1.1 * np.exp(-((hour - 17.5) / 1.5) ** 2))


def _commute_phase(hour):
    if 6.5 <= hour < 10.5:
        return 1.0
    if 15.5 <= hour < 19.5:
        return -1.0
    return 0.0


def _stations(config, rng):
    blocks = np.array_split(np.arange(config.n_stations), config.n_regions)
    rows = []
    region_of = np.zeros(config.n_stations, dtype=np.int64)
    for r, block in enumerate(blocks):
        city, zip_code = _CITIES[r] if r < len(_CITIES) else (f"Region {r + 1}", f"9{r + 1:04d}")
        lat0, lon0 = 37.78 - 0.12 * r, -122.40 + 0.08 * r
        for i in block:
            region_of[i] = r
            rows.append({
                "id": int(i) + 1,
                "name": f"Synthetic Station {int(i) + 1}",
                "lat": round(lat0 + rng.normal(0, 0.005), 6),
                "long": round(lon0 + rng.normal(0, 0.005), 6),
                "dock_count": int(rng.integers(config.min_docks, config.max_docks + 1)),
                "city": city,
                "installation_date": "8/6/2013",
                "zip_code": zip_code,
            })
    return pd.DataFrame(rows), region_of, blocks


def _weather(config, zips, rng):
    days = pd.date_range(config.start_date, periods=config.span_days, freq="D")
    rows = []
    flags = {}
    for day in days:
        season = np.sin(2 * np.pi * (day.dayofyear - 110) / 365.0)
        for zip_code in zips:
            rainy = rng.random() < config.rain_probability
            foggy = rng.random() < config.fog_probability
            if rainy:
                precipitation = f"{rng.gamma(1.5, 0.2):.2f}"
                roll = rng.random()
                event = "Rain-Thunderstorm" if roll < 0.05 else ("Fog-Rain" if foggy else "Rain")
            else:
                precipitation = "T" if rng.random() < 0.05 else "0"
                event = "Fog" if foggy else ""
            rows.append({
                "date": f"{day.month}/{day.day}/{day.year}",
                "mean_temperature_f": int(round(60 + 10 * season + rng.normal(0, 3))),
                "mean_humidity": int(np.clip(round(70 + (12 if rainy else 0) + rng.normal(0, 6)), 0, 100)),
                "mean_visibility_miles": int(6 if foggy else 10),
                "mean_wind_speed_mph": int(round(abs(rng.normal(8, 3)))),
                "precipitation_inches": precipitation,
                "events": event,
                "zip_code": zip_code,
            })
            flags[(day.date(), zip_code)] = rainy
    return pd.DataFrame(rows), flags


def generate_synthetic(config: SyntheticConfig, out_dir) -> SyntheticBundle:
    """Simulate the network and write station, status, trip and weather files.

    The same config always produces byte-identical files.
    """
    rng = np.random.default_rng(config.seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    stations, region_of, blocks = _stations(config, rng)
    zips = list(dict.fromkeys(stations["zip_code"]))
    weather, rainy = _weather(config, zips, rng)

    n = config.n_stations
    capacity = stations["dock_count"].to_numpy()
    bikes = capacity // 2
    role = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)  # +1 work, -1 home
    zip_of = stations["zip_code"].to_numpy()
    start = pd.Timestamp(config.start_date)
    total = config.span_days * 24 * 60
    last_departure = total - config.drain_minutes

    in_transit = []  # heap of (arrival minute, trip id, origin, destination, start minute)
    trips = []
    status_minutes = []
    status_bikes = []
    fleet = np.zeros(total, dtype=np.int64)
    trip_id = 0
    base_rate = config.trips_per_station_hour / 60.0

    for minute in range(total):
        while in_transit and in_transit[0][0] <= minute:
            _, tid, origin, dest, began = heapq.heappop(in_transit)
            if bikes[dest] < capacity[dest]:
                bikes[dest] += 1
                trips.append((tid, began, minute, origin, dest))
            else:
                heapq.heappush(in_transit, (minute + 1, tid, origin, dest, began))

        if minute < last_departure:
            moment = start + pd.Timedelta(minutes=minute)
            hour = moment.hour + moment.minute / 60.0
            day = moment.date()
            weekend = moment.dayofweek >= 5
            rate = base_rate * _diurnal(hour) * (0.6 if weekend else 1.0)
            factors = np.array([config.rain_rate_factor if rainy[(day, z)] else 1.0 for z in zip_of])
            departures = np.minimum(rng.poisson(rate * factors), bikes)
            phase = 0.0 if weekend else _commute_phase(hour)
            for origin in np.flatnonzero(departures):
                for _ in range(int(departures[origin])):
                    dest = _destination(origin, region_of, blocks, role, phase, config, rng)
                    duration = int(rng.integers(config.min_trip_minutes, config.max_trip_minutes + 1))
                    bikes[origin] -= 1
                    trip_id += 1
                    heapq.heappush(in_transit, (minute + duration, trip_id, int(origin), int(dest), minute))

        fleet[minute] = bikes.sum() + len(in_transit)
        if minute % config.status_step_minutes == 0:
            status_minutes.append(minute)
            status_bikes.append(bikes.copy())

    if in_transit:
        logger.warning("%d trips still in transit at the end of the simulation", len(in_transit))

    paths = _write(out, config, stations, weather, trips, status_minutes, status_bikes, capacity, start)
    logger.info("synthetic network: %d stations, %d regions, %d trips", n, config.n_regions, len(trips))
    return SyntheticBundle(
        *paths,
        regions=[[int(i) + 1 for i in block] for block in blocks],
        fleet_trace=fleet,
        n_trips=len(trips),
    )


def _destination(origin, region_of, blocks, role, phase, config, rng):
    region = region_of[origin]
    if len(blocks) > 1 and rng.random() >= config.intra_region_preference:
        others = [r for r in range(len(blocks)) if r != region]
        region = others[int(rng.integers(len(others)))]
    members = blocks[region]
    members = members[members != origin] if len(members) > 1 else members
    weights = np.maximum(1.0 + config.commute_bias * phase * role[members], 0.05)
    return int(members[rng.choice(len(members), p=weights / weights.sum())])


def _format_trip_time(moment):
    return f"{moment.month}/{moment.day}/{moment.year} {moment.hour}:{moment.minute:02d}"


def _write(out, config, stations, weather, trips, status_minutes, status_bikes, capacity, start):
    station_path = out / settings.STATION_FILE
    stations.to_csv(station_path, index=False, lineterminator="\n")

    weather_path = out / settings.WEATHER_FILE
    weather.to_csv(weather_path, index=False, lineterminator="\n")

    stamps = pd.DatetimeIndex(start + pd.to_timedelta(np.asarray(status_minutes), unit="m"))
    labels = stamps.strftime("%Y/%m/%d %H:%M:%S").to_numpy()
    n = len(capacity)
    stock = np.asarray(status_bikes).reshape(len(status_minutes), n)
    status = pd.DataFrame({
        "station_id": np.tile(np.arange(1, n + 1), len(status_minutes)),
        "bikes_available": stock.ravel(),
        "docks_available": (capacity[None, :] - stock).ravel(),
        "time": np.repeat(labels, n),
    })
    status_path = out / settings.STATUS_FILE
    status.to_csv(status_path, index=False, lineterminator="\n")

    trip_rows = []
    names = stations["name"].to_numpy()
    for tid, began, ended, origin, dest in sorted(trips):
        t0 = start + pd.Timedelta(minutes=began)
        t1 = start + pd.Timedelta(minutes=ended)
        trip_rows.append({
            "id": tid,
            "duration": (ended - began) * 60,
            "start_date": _format_trip_time(t0),
            "start_station_name": names[origin],
            "start_station_id": origin + 1,
            "end_date": _format_trip_time(t1),
            "end_station_name": names[dest],
            "end_station_id": dest + 1,
            "bike_id": 100 + tid % 700,
            "subscription_type": "Subscriber",
            "zip_code": stations["zip_code"].iat[origin],
        })
    trip_columns = ["id", "duration", "start_date", "start_station_name", "start_station_id", "end_date",
                    "end_station_name", "end_station_id", "bike_id", "subscription_type", "zip_code"]
    trip_path = out / settings.TRIP_FILE
    pd.DataFrame(trip_rows, columns=trip_columns).to_csv(trip_path, index=False, lineterminator="\n")
    return station_path, status_path, trip_path, weather_path
