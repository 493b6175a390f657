import io
import tempfile
import unittest
from datetime import date, datetime, timedelta
from pathlib import Path

import numpy as np
import pandas as pd

from src.core.ingest import (
    ChangeEvent,
    EventStore,
    StatusSnapshot,
    check_capacity,
    compress_status,
    detect_changes,
    iter_snapshots,
    normalize_event,
    parse_stations,
    parse_status,
    parse_trips,
    parse_weather,
    read_events,
    stock_at,
    write_events,
    write_weather,
)
from src.utils.errors import OrderingError, SchemaError, ValidationError

STATIONS = """id,name,lat,long,dock_count,city,installation_date
2,San Jose Diridon,37.329732,-121.901782,27,San Jose,8/6/2013
3,San Jose Civic Center,37.330698,-121.888979,15,San Jose,8/5/2013
4,Broken,37.3,-121.9,not-a-number,San Jose,8/5/2013
70,San Francisco Caltrain,37.776617,-122.39526,19,San Francisco,8/23/2013
"""

WEATHER = """date,mean_temperature_f,mean_humidity,mean_visibility_miles,mean_wind_speed_mph,precipitation_inches,events,zip_code
3/2/2015,58,75,10,7,T,Rain,94107
3/3/2015,61,68,9,5,0.12,Fog-Rain,94107
3/4/2015,60,140,10,6,0,,94107
3/5/2015,62,70,10,4,0,Hail,94107
3/6/2015,59,71,8,6,0.3,Rain-Thunderstorm,95113
"""

STATUS = """station_id,bikes_available,docks_available,time
3,7,8,2015/03/02 08:01:00
2,5,22,2015/03/02 08:00:00
2,5,22,2015/03/02 08:01:00
2,x,22,2015/03/02 08:02:00
2,4,23,2015/03/02 08:03:00
3,6,9,2015/03/02 08:00:00
"""

TRIPS = """id,duration,start_date,start_station_name,start_station_id,end_date,end_station_name,end_station_id,bike_id,subscription_type,zip_code
10,300,3/2/2015 8:05,a,2,3/2/2015 8:10,b,3,101,Subscriber,94107
11,600,3/2/2015 9:00,b,3,3/2/2015 9:10,a,2,102,Subscriber,94107
12,-5,3/2/2015 9:30,b,3,3/2/2015 9:40,a,2,103,Customer,94107
13,400,3/2/2015 9:30,b,3,3/2/2015 9:40,z,999,104,Customer,94107
"""


def _status_frame(rows):
    frame = pd.DataFrame(rows, columns=["station_id", "bikes_available", "docks_available", "time"])
    frame["time"] = pd.to_datetime(frame["time"])
    return frame


class TestParsers(unittest.TestCase):
    def test_stations_use_city_zip_and_skip_malformed(self):
        result = parse_stations(io.StringIO(STATIONS))
        self.assertEqual([s.station_id for s in result.records], [2, 3, 70])
        self.assertEqual(result.skipped, 1)
        self.assertEqual(result.records[0].zip_code, "95113")
        self.assertEqual(result.records[2].zip_code, "94107")
        self.assertEqual(result.records[0].dock_count, 27)

    def test_station_zip_column_wins(self):
        text = "id,name,lat,long,dock_count,city,zip_code\n1,A,37.0,-122.0,10,San Jose,90001\n"
        self.assertEqual(parse_stations(io.StringIO(text)).records[0].zip_code, "90001")

    def test_duplicate_station_id(self):
        text = STATIONS + "2,Again,37.0,-121.0,10,San Jose,8/6/2013\n"
        with self.assertRaises(ValidationError):
            parse_stations(io.StringIO(text))

    def test_missing_column_is_named(self):
        with self.assertRaises(SchemaError) as ctx:
            parse_stations(io.StringIO("id,name,lat,long,city\n1,a,1,2,x\n"))
        self.assertIn("dock_count", str(ctx.exception))

    def test_weather_normalisation(self):
        result = parse_weather(io.StringIO(WEATHER))
        records = {(w.date, w.zip_code): w for w in result.records}
        self.assertEqual(result.skipped, 1)  # humidity 140
        self.assertEqual(result.unknown_events, 1)
        first = records[(date(2015, 3, 2), "94107")]
        self.assertAlmostEqual(first.precipitation, 0.01)
        self.assertEqual(first.event, "rain")
        self.assertEqual(records[(date(2015, 3, 3), "94107")].event, "fog_rain")
        self.assertEqual(records[(date(2015, 3, 5), "94107")].event, "other")
        self.assertEqual(records[(date(2015, 3, 6), "95113")].event, "thunderstorm")

    def test_event_labels(self):
        self.assertEqual(normalize_event(""), "none")
        self.assertEqual(normalize_event(" rain "), "rain")
        self.assertEqual(normalize_event("Fog-Rain"), "fog_rain")
        self.assertIsNone(normalize_event("Hail"))

    def test_weather_write_then_parse_is_stable(self):
        records = parse_weather(io.StringIO(WEATHER)).records
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "weather.csv"
            write_weather(records, path)
            again = parse_weather(path).records
        self.assertEqual(again, records)

    def test_status_sorted_and_malformed_skipped(self):
        result = parse_status(io.StringIO(STATUS))
        frame = result.records
        self.assertEqual(result.skipped, 1)
        self.assertEqual(list(frame["station_id"]), [2, 2, 2, 3, 3])
        station_three = frame[frame["station_id"] == 3]
        self.assertEqual(list(station_three["bikes_available"]), [6, 7])

    def test_status_lines_with_extra_fields_are_counted(self):
        text = ("station_id,bikes_available,docks_available,time\n"
                "2,5,22,2015/03/02 08:00:00\n"
                "2,4,23,2015/03/02 08:01:00,junk\n"
                "2,3,24,2015/03/02 08:02:00\n")
        result = parse_status(io.StringIO(text))
        self.assertEqual(result.skipped, 1)
        self.assertEqual(list(result.records["bikes_available"]), [5, 3])

    def test_status_missing_column(self):
        with self.assertRaises(SchemaError):
            parse_status(io.StringIO("station_id,bikes_available,time\n1,2,2015/03/02 08:00:00\n"))

    def test_trips_drop_unresolved_and_malformed(self):
        stations = parse_stations(io.StringIO(STATIONS)).records
        result = parse_trips(io.StringIO(TRIPS), stations)
        self.assertEqual([t.trip_id for t in result.records], [10, 11])
        self.assertEqual(result.skipped, 1)
        self.assertEqual(result.unresolved, 1)
        self.assertEqual(result.records[0].start_time, datetime(2015, 3, 2, 8, 5))

    def test_capacity_violations_are_counted(self):
        stations = parse_stations(io.StringIO(STATIONS)).records
        status = _status_frame([
            (3, 10, 10, "2015-03-02 08:00"),
            (3, 5, 10, "2015-03-02 08:01"),
        ])
        self.assertEqual(check_capacity(status, stations), 1)


class TestChangeDetection(unittest.TestCase):
    def test_only_changes_are_kept(self):
        t0 = datetime(2015, 3, 2, 8, 0)
        snapshots = [
            StatusSnapshot(1, 5, 10, t0),
            StatusSnapshot(1, 5, 10, t0 + timedelta(minutes=1)),
            StatusSnapshot(1, 4, 11, t0 + timedelta(minutes=2)),
        ]
        events = detect_changes(snapshots)
        self.assertEqual(events, [ChangeEvent(1, t0, 5), ChangeEvent(1, t0 + timedelta(minutes=2), 4)])

    def test_unsorted_snapshots(self):
        t0 = datetime(2015, 3, 2, 8, 0)
        with self.assertRaises(OrderingError):
            detect_changes([StatusSnapshot(1, 5, 10, t0 + timedelta(minutes=1)), StatusSnapshot(1, 4, 10, t0)])

    def test_filter_matches_brute_force(self):
        rng = np.random.default_rng(3)
        t0 = datetime(2015, 3, 2)
        bikes = rng.integers(0, 4, 1000)
        snapshots = [StatusSnapshot(9, int(b), 10, t0 + timedelta(minutes=i)) for i, b in enumerate(bikes)]
        expected = [ChangeEvent(9, s.timestamp, s.bikes_available) for i, s in enumerate(snapshots)
                    if i == 0 or s.bikes_available != snapshots[i - 1].bikes_available]
        self.assertEqual(detect_changes(snapshots), expected)

    def test_detection_is_idempotent(self):
        rng = np.random.default_rng(5)
        t0 = datetime(2015, 3, 2)
        snapshots = [StatusSnapshot(4, int(b), 10, t0 + timedelta(minutes=i))
                     for i, b in enumerate(rng.integers(0, 3, 300))]
        events = detect_changes(snapshots)
        replayed = [StatusSnapshot(e.station_id, e.bikes_available, 10, e.timestamp) for e in events]
        self.assertEqual(detect_changes(replayed), events)

    def test_stock_before_first_event_is_undefined(self):
        t0 = datetime(2015, 3, 2, 8, 0)
        events = [ChangeEvent(1, t0, 5)]
        self.assertIsNone(stock_at(events, t0 - timedelta(minutes=1)))
        self.assertEqual(stock_at(events, t0), 5)
        self.assertEqual(stock_at(events, t0 + timedelta(days=3)), 5)

    def test_replay_reproduces_every_snapshot(self):
        rng = np.random.default_rng(7)
        start = datetime(2015, 3, 2)
        for _ in range(50):
            rows = []
            for sid in (1, 2, 3):
                minutes = np.sort(rng.choice(600, size=int(rng.integers(1, 60)), replace=False))
                bikes = np.cumsum(rng.integers(-1, 2, len(minutes))) + 10
                rows += [(sid, int(b), 5, start + timedelta(minutes=int(m))) for m, b in zip(minutes, bikes)]
            status = _status_frame(rows)
            store = compress_status(status)
            self.assertLessEqual(store.n_events, len(status))
            for sid in (1, 2, 3):
                snapshots = iter_snapshots(status, sid)
                events = detect_changes(snapshots)
                self.assertEqual(store[sid].to_events(), events)
                for snapshot in snapshots:
                    self.assertEqual(stock_at(events, snapshot.timestamp), snapshot.bikes_available)
                    self.assertEqual(store[sid].stock_at(snapshot.timestamp), snapshot.bikes_available)

    def test_vectorised_lookup(self):
        t0 = datetime(2015, 3, 2, 8, 0)
        store = EventStore.from_events([ChangeEvent(1, t0, 5), ChangeEvent(1, t0 + timedelta(minutes=10), 2)])
        times = np.array(["2015-03-02T07:59", "2015-03-02T08:05", "2015-03-02T08:10"], dtype="datetime64[m]")
        values, defined = store[1].stock_at_many(times)
        np.testing.assert_array_equal(defined, [False, True, True])
        np.testing.assert_array_equal(values[defined], [5, 2])
        self.assertEqual(store.span_start, np.datetime64("2015-03-02T08:00"))
        self.assertEqual(store.span_end, np.datetime64("2015-03-02T08:10"))

    def test_unsorted_status_table(self):
        status = _status_frame([(1, 5, 5, "2015-03-02 08:05"), (1, 4, 5, "2015-03-02 08:00")])
        with self.assertRaises(OrderingError):
            compress_status(status)

    def test_events_file_round_trip(self):
        t0 = datetime(2015, 3, 2, 8, 0)
        store = EventStore.from_events([
            ChangeEvent(1, t0, 5), ChangeEvent(1, t0 + timedelta(minutes=3), 6), ChangeEvent(4, t0, 0),
        ])
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "events.csv"
            write_events(store, path, stamp=(42, "abc123"))
            self.assertTrue(path.read_text().startswith("# seed=42 config_hash=abc123\n"))
            again = read_events(path)
        self.assertEqual(again.station_ids, [1, 4])
        self.assertEqual(again[1].to_events(), store[1].to_events())


if __name__ == "__main__":
    unittest.main()
