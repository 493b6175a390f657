import tempfile
import unittest
from datetime import date, datetime, timedelta
from pathlib import Path

import numpy as np

from config import settings
from src.core.features import (
    DesignMatrix,
    WeatherTable,
    build_region_rows,
    build_rows,
    build_station_matrix,
    chronological_split,
    export_design,
    grid_times,
    inverse_target,
    log1p_target,
    station_schema,
)
from src.core.graph import NeighborSet
from src.core.ingest import ChangeEvent, DailyWeather, EventStore, stock_at
from src.utils.data_processor import read_exported_csv
from src.utils.errors import DegenerateSplitError, LookupFailure, ValidationError

DAY = datetime(2015, 3, 2)  # a Monday


def _at(hour, minute):
    return DAY + timedelta(hours=hour, minutes=minute)


def _store():
    events = [
        ChangeEvent(1, _at(8, 0), 5), ChangeEvent(1, _at(8, 20), 3), ChangeEvent(1, _at(8, 50), 4),
        ChangeEvent(2, _at(8, 0), 7), ChangeEvent(2, _at(8, 40), 9),
    ]
    return EventStore.from_events(events, _at(8, 0), _at(9, 0))


def _weather(days=(date(2015, 3, 2),)):
    return WeatherTable([DailyWeather(d, "94107", 60.0, 70.0, 10.0, 8.0, 0.0, "rain") for d in days])


def _random_day_store(rng, station_ids):
    events = []
    for sid in station_ids:
        minutes = np.concatenate([[0], np.sort(rng.choice(np.arange(1, 1440), 39, replace=False))])
        bikes = rng.integers(0, 16, len(minutes))
        events += [ChangeEvent(sid, DAY + timedelta(minutes=int(m)), int(b)) for m, b in zip(minutes, bikes)]
    return events, EventStore.from_events(events, DAY, DAY + timedelta(minutes=1439))


class TestGrid(unittest.TestCase):
    def test_grid_is_aligned_to_midnight(self):
        grid = grid_times(np.datetime64("2015-03-02T08:07"), np.datetime64("2015-03-02T09:00"), 15)
        np.testing.assert_array_equal(
            grid, np.array(["2015-03-02T08:15", "2015-03-02T08:30", "2015-03-02T08:45", "2015-03-02T09:00"],
                           dtype="datetime64[m]"))

    def test_grid_covers_the_span(self):
        rng = np.random.default_rng(9)
        for _ in range(200):
            start = np.datetime64("2015-03-02T00:00") + np.timedelta64(int(rng.integers(0, 3000)), "m")
            end = start + np.timedelta64(int(rng.integers(0, 2000)), "m")
            step = int(rng.choice([5, 10, 15, 30, 60]))
            grid = grid_times(start, end, step)
            span = int((end - start) / np.timedelta64(1, "m"))
            self.assertLessEqual(len(grid), span // step + 1)
            if len(grid):
                self.assertGreaterEqual(grid[0], start)
                self.assertLessEqual(grid[-1], end)
                offsets = (grid - grid.astype("datetime64[D]")).astype(int)
                self.assertTrue((offsets % step == 0).all())

    def test_target_transform(self):
        self.assertEqual(inverse_target(log1p_target(0)), 0.0)
        np.testing.assert_allclose(inverse_target(log1p_target([3, 12])), [3, 12])
        self.assertEqual(inverse_target(-0.5), 0.0)


class TestStationRows(unittest.TestCase):
    def test_hand_computed_rows(self):
        design = build_station_matrix(_store(), _weather(), NeighborSet(1, (2,)), 1, 15, 15, "94107")
        self.assertEqual(len(design), 4)
        np.testing.assert_array_equal(design.X[:, 0], [5, 5, 3, 3])
        np.testing.assert_array_equal(design.X[:, 1], [7, 7, 7, 9])
        np.testing.assert_allclose(design.y, np.log1p([5, 3, 3, 4]))
        names = list(design.schema.feature_names)
        np.testing.assert_array_equal(design.X[:, names.index("month")], [3] * 4)
        np.testing.assert_array_equal(design.X[:, names.index("day_of_week")], [1] * 4)
        np.testing.assert_array_equal(design.X[:, names.index("time_of_day")], [480, 495, 510, 525])
        np.testing.assert_array_equal(design.X[:, names.index("event")], [2] * 4)
        self.assertTrue((design.target_times <= np.datetime64(_at(9, 0), "m")).all())

    def test_rows_match_matrix(self):
        rows = build_rows(_store(), _weather(), NeighborSet(1, (2,)), 1, 15, 30, "94107")
        design = build_station_matrix(_store(), _weather(), NeighborSet(1, (2,)), 1, 15, 30, "94107")
        self.assertEqual(len(rows), len(design))
        self.assertEqual(rows[0].own_stock, 5)
        self.assertEqual(rows[0].neighbor_stocks, (7,))
        self.assertEqual(rows[0].weather[-1], "rain")
        self.assertEqual(rows[0].target_time, _at(8, 30))
        rebuilt = DesignMatrix.from_rows(rows, design.schema, 30)
        np.testing.assert_array_equal(rebuilt.X, design.X)
        np.testing.assert_array_equal(rebuilt.y, design.y)

    def test_missing_weather(self):
        empty = WeatherTable([])
        design = build_station_matrix(_store(), empty, NeighborSet(1, (2,)), 1, 15, 15, "94107")
        self.assertEqual(len(design), 0)
        kept = build_station_matrix(_store(), empty, NeighborSet(1, (2,)), 1, 15, 15, "94107",
                                    include_missing_weather=True)
        self.assertEqual(len(kept), 4)
        self.assertTrue(kept.weather_missing.all())
        self.assertTrue(np.isnan(kept.X[:, -1]).all())
        self.assertIsNone(kept.rows()[0].weather)

    def test_one_hot_events(self):
        design = build_station_matrix(_store(), _weather(), NeighborSet(1, (2,)), 1, 15, 15, "94107",
                                      one_hot_events=True)
        self.assertEqual(design.schema.width, station_schema(1, True).width)
        names = list(design.schema.feature_names)
        np.testing.assert_array_equal(design.X[:, names.index("event_rain")], [1] * 4)
        self.assertEqual(design.X[:, names.index("event_none")].sum(), 0)

    def test_rows_replay_the_events(self):
        rng = np.random.default_rng(21)
        events, store = _random_day_store(rng, (1, 2, 3))
        by_station = {sid: [e for e in events if e.station_id == sid] for sid in (1, 2, 3)}
        end = DAY + timedelta(minutes=1439)
        for delta in (15, 60):
            rows = build_rows(store, _weather(), NeighborSet(1, (3, 2)), 1, 15, delta, "94107")
            expected = []
            t = DAY
            while t + timedelta(minutes=delta) <= end:
                target = t + timedelta(minutes=delta)
                expected.append((t, stock_at(by_station[1], t),
                                 (stock_at(by_station[3], t), stock_at(by_station[2], t)),
                                 stock_at(by_station[1], target), target))
                t += timedelta(minutes=15)
            got = [(r.time, r.own_stock, r.neighbor_stocks, round(float(np.expm1(r.target))), r.target_time)
                   for r in rows]
            self.assertEqual(got, expected)

    def test_one_hot_rows_have_exactly_one_event(self):
        days = [date(2015, 3, 2) + timedelta(days=i) for i in range(3)]
        events = ["none", "rain", "fog_rain"]
        weather = WeatherTable([DailyWeather(d, "94107", 60.0, 70.0, 10.0, 8.0, 0.0, e) for d, e in zip(days, events)])
        store = EventStore.from_events([ChangeEvent(1, DAY, 4), ChangeEvent(2, DAY, 6)],
                                       DAY, DAY + timedelta(days=2, hours=23))
        design = build_station_matrix(store, weather, NeighborSet(1, (2,)), 1, 60, 60, "94107",
                                      one_hot_events=True)
        names = list(design.schema.feature_names)
        block = design.X[:, [names.index(f"event_{e}") for e in settings.WEATHER_EVENTS]]
        self.assertGreater(len(design), 60)
        np.testing.assert_array_equal(block.sum(axis=1), np.ones(len(design)))
        self.assertEqual(set(np.argmax(block, axis=1)), {settings.WEATHER_EVENTS.index(e) for e in events})

    def test_neighbor_without_events_gives_no_rows(self):
        design = build_station_matrix(_store(), _weather(), NeighborSet(1, (8,)), 1, 15, 15, "94107")
        self.assertEqual(len(design), 0)

    def test_errors(self):
        with self.assertRaises(ValidationError):
            build_station_matrix(_store(), _weather(), NeighborSet(1, (2,)), 1, 15, 0)
        with self.assertRaises(LookupFailure):
            build_station_matrix(_store(), _weather(), NeighborSet(5, (2,)), 5, 15, 15)

    def test_export(self):
        design = build_station_matrix(_store(), _weather(), NeighborSet(1, (2,)), 1, 15, 15, "94107")
        with tempfile.TemporaryDirectory() as tmp:
            path = export_design(design, Path(tmp) / "features.csv", Path(tmp) / "schema.json", (3, "h"))
            frame = read_exported_csv(path)
            self.assertTrue((Path(tmp) / "schema.json").is_file())
        self.assertEqual(len(frame), 4)
        self.assertIn("target", frame.columns)


class TestRegionRows(unittest.TestCase):
    def test_one_target_column_per_station(self):
        neighbors = {1: NeighborSet(1, (2,)), 2: NeighborSet(2, (1,))}
        design = build_region_rows(_store(), _weather(), {1, 2}, neighbors, 15, 15, "94107")
        self.assertEqual(design.y.shape, (4, 2))
        self.assertEqual(design.schema.target_names, ("target_1", "target_2"))
        np.testing.assert_allclose(design.y[:, 1], np.log1p([7, 7, 9, 9]))
        self.assertEqual(design.X.shape[1], design.schema.width)

    def test_region_block_matches_brute_force(self):
        rng = np.random.default_rng(33)
        events, store = _random_day_store(rng, (1, 2, 3, 4, 5))
        by_station = {sid: [e for e in events if e.station_id == sid] for sid in (1, 2, 3, 4, 5)}
        neighbors = {1: NeighborSet(1, (5, 2)), 2: NeighborSet(2, (1, 3)),
                     3: NeighborSet(3, (4, 5)), 4: NeighborSet(4, (3, 1))}
        design = build_region_rows(store, _weather(), {4, 2, 3, 1}, neighbors, 30, 45, "94107")
        stock_order = [1, 5, 2, 3, 4]
        self.assertEqual(design.schema.feature_names[:5], tuple(f"stock_{sid}" for sid in stock_order))
        self.assertEqual(design.schema.target_names, ("target_1", "target_2", "target_3", "target_4"))
        times = design.times.astype(datetime)
        self.assertEqual(len(times), (1439 - 45) // 30 + 1)
        for r, t in enumerate(times):
            expected_x = [stock_at(by_station[sid], t) for sid in stock_order]
            expected_y = [stock_at(by_station[sid], t + timedelta(minutes=45)) for sid in (1, 2, 3, 4)]
            np.testing.assert_array_equal(design.X[r, :5], expected_x)
            np.testing.assert_allclose(design.y[r], np.log1p(expected_y))
        self.assertTrue((design.station_ids == -1).all())


class TestSplit(unittest.TestCase):
    def _design(self, n=10):
        schema = station_schema(0)
        times = np.datetime64("2015-03-02T08:00") + np.arange(n) * np.timedelta64(15, "m")
        return DesignMatrix(np.zeros((n, schema.width)), np.arange(n, dtype=float), times,
                            np.ones(n, dtype=np.int64), 15, schema)

    def test_chronological_with_leakage_guard(self):
        split = chronological_split(self._design(), 0.8)
        self.assertEqual(split.split_time, np.datetime64("2015-03-02T10:00"))
        np.testing.assert_array_equal(split.train.y, np.arange(7))
        np.testing.assert_array_equal(split.test.y, [8, 9])
        self.assertEqual(split.leakage_dropped, 1)
        self.assertTrue((split.train.target_times < split.split_time).all())
        self.assertLess(split.train.times.max(), split.test.times.min())

    def test_random_timestamps_split_cleanly(self):
        rng = np.random.default_rng(17)
        schema = station_schema(0)
        for _ in range(100):
            n = int(rng.integers(2, 80))
            times = np.datetime64("2015-03-02T00:00") + rng.integers(0, 40, n) * np.timedelta64(15, "m")
            if len(set(times.tolist())) < 2:
                continue
            delta = int(rng.choice([15, 60, 120]))
            design = DesignMatrix(np.zeros((n, schema.width)), np.arange(n, dtype=float), times,
                                  np.ones(n, dtype=np.int64), delta, schema)
            split = chronological_split(design, float(rng.uniform(0.05, 0.95)))
            self.assertGreater(len(split.test), 0)
            self.assertTrue((split.train.times < split.split_time).all())
            self.assertTrue((split.train.target_times < split.split_time).all())
            self.assertTrue((split.test.times >= split.split_time).all())
            self.assertEqual(len(split.train) + len(split.test) + split.leakage_dropped, n)
            early = design.times < split.split_time
            self.assertEqual(int(early.sum()), len(split.train) + split.leakage_dropped)

    def test_degenerate_split(self):
        design = self._design()
        design.times[:] = design.times[0]
        with self.assertRaises(DegenerateSplitError):
            chronological_split(design)

    def test_bad_fraction(self):
        with self.assertRaises(ValidationError):
            chronological_split(self._design(), 1.0)


if __name__ == "__main__":
    unittest.main()
