"""Command-line pipeline: synth -> ingest -> graph -> features / sweep -> compare.

Each subcommand reads the artifacts of the previous stages from the output
directory, so every stage can be rerun and inspected on its own.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import pandas as pd

from config import settings
from src.cli.run_config import REGION_SOURCES, RunConfig
from src.core.features import WeatherTable, build_station_matrix, export_design
from src.core.graph import (build_adjacency, neighbor_map, partition_by_zip, partition_regions, read_neighbors,
                            read_partition, validate_partition_zip, write_adjacency, write_neighbors,
                            write_partition)
from src.core.ingest import (IngestSummary, check_capacity, compress_status, parse_stations, parse_status,
                             parse_trips, parse_weather, read_events, write_events, write_stations,
                             write_weather)
from src.experiments.metrics import report_from_summary
from src.experiments.sweeps import (BikeShareDataset, compare_models, run_multivariate_sweep, run_univariate_sweep,
                                    tree_count_table)
from src.experiments.synthetic import generate_synthetic
from src.utils.data_processor import export_to_csv, export_to_json, open_artifact, read_exported_csv
from src.utils.errors import BikeShareError, LookupFailure, MissingArtifactError, ValidationError, exit_code_for

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(name)s - %(message)s"


def _require(path: Path) -> Path:
    if not path.is_file():
        raise MissingArtifactError(path)
    return path


def _read_artifact(parser, path, *args):
    with open_artifact(_require(path)) as handle:
        return parser(handle, *args)


def cmd_synth(config: RunConfig):
    bundle = generate_synthetic(config.synthetic_config(), config.out / settings.SYNTHETIC_DIR)
    print(f"synthetic network: {config.synthetic_stations} stations, {len(bundle.regions)} regions, "
          f"{bundle.n_trips} trips -> {bundle.station_path.parent}")
    return bundle


def cmd_ingest(config: RunConfig) -> IngestSummary:
    paths = config.input_paths()
    for path in paths.values():
        if not path.is_file():
            raise ValidationError(f"input file not found: {path}")

    stations = parse_stations(paths["station"])
    weather = parse_weather(paths["weather"])
    status = parse_status(paths["status"])
    trips = parse_trips(paths["trip"], stations.records)
    violations = check_capacity(status.records, stations.records)
    store = compress_status(status.records)

    out, stamp = config.out, config.stamp
    write_events(store, out / settings.EVENTS_FILE, stamp)
    write_stations(stations.records, out / settings.STATIONS_OUT_FILE, stamp)
    write_weather(weather.records, out / settings.WEATHER_OUT_FILE, stamp)

    summary = IngestSummary(
        stations=len(stations),
        snapshots=len(status.records),
        events=store.n_events,
        trips=len(trips),
        weather_days=len(weather),
        skipped={"station": stations.skipped, "status": status.skipped,
                 "trip": trips.skipped, "weather": weather.skipped},
        capacity_violations=violations,
        unknown_events=weather.unknown_events,
        unresolved_trips=trips.unresolved,
        span_start=str(store.span_start) if store.span_start is not None else "",
        span_end=str(store.span_end) if store.span_end is not None else "",
    )
    export_to_json(summary.to_dict(), out / settings.INGEST_SUMMARY_FILE, stamp)
    print(f"ingested {summary.stations} stations, {summary.snapshots} snapshots -> {summary.events} events, "
          f"{summary.trips} trips, {summary.weather_days} weather days; skipped {sum(summary.skipped.values())}")
    return summary


def _load_stations(config):
    return _read_artifact(parse_stations, config.out / settings.STATIONS_OUT_FILE).records


def cmd_graph(config: RunConfig):
    stations = _load_stations(config)
    trips = parse_trips(config.input_paths()["trip"], stations)
    adjacency = build_adjacency(trips.records, stations)
    neighbors = neighbor_map(adjacency, config.neighbor_count(len(stations)))
    if config.region_source == "zip":
        partition = partition_by_zip(stations)
    else:
        partition = partition_regions(adjacency, config.threshold_fraction)
    purity = validate_partition_zip(partition, stations)

    out, stamp = config.out, config.stamp
    write_adjacency(adjacency, out / settings.ADJACENCY_FILE, stamp)
    write_neighbors(neighbors, out / settings.NEIGHBORS_FILE, stamp)
    write_partition(partition, out / settings.REGIONS_FILE, stamp)
    purity_frame = pd.DataFrame([(p.region_id, p.size, p.modal_zip, p.purity) for p in purity],
                                columns=["region_id", "size", "modal_zip", "purity"])
    export_to_csv(purity_frame, out / settings.ZIP_PURITY_FILE, stamp)

    print(f"{len(partition.regions)} regions (edge cutoff {partition.threshold_used:.3f} trips)")
    print(purity_frame.to_string(index=False, float_format=lambda v: f"{v:.3f}"))
    return partition


def load_dataset(config: RunConfig) -> BikeShareDataset:
    out = config.out
    summary = json.loads(_require(out / settings.INGEST_SUMMARY_FILE).read_text())
    events = read_events(_require(out / settings.EVENTS_FILE),
                         summary.get("span_start") or None, summary.get("span_end") or None)
    stations = _load_stations(config)
    weather = _read_artifact(parse_weather, out / settings.WEATHER_OUT_FILE).records
    neighbors = read_neighbors(_require(out / settings.NEIGHBORS_FILE))
    return BikeShareDataset(stations, events, WeatherTable(weather), neighbors)


def cmd_features(config: RunConfig, station_ids=None, one_hot=False):
    dataset = load_dataset(config)
    station_ids = station_ids or dataset.station_ids
    written = []
    for sid in station_ids:
        if sid not in dataset.neighbors:
            raise LookupFailure(f"station {sid} has no neighbour set")
        for delta in config.horizons:
            design = build_station_matrix(
                dataset.events, dataset.weather, dataset.neighbors[sid], sid, config.grid_step, delta,
                dataset.zip_of(sid), one_hot_events=one_hot,
                include_missing_weather=config.include_missing_weather,
            )
            path = config.out / f"features_{sid}_d{delta}.csv"
            export_design(design, path, config.out / settings.SCHEMA_FILE, config.stamp)
            written.append(path)
            logger.info("station %s delta %d: %d rows -> %s", sid, delta, len(design), path.name)
    print(f"wrote {len(written)} feature files")
    return written


def _graph_artifacts_present(config):
    names = (settings.EVENTS_FILE, settings.STATIONS_OUT_FILE, settings.WEATHER_OUT_FILE,
             settings.INGEST_SUMMARY_FILE, settings.NEIGHBORS_FILE, settings.REGIONS_FILE)
    return all((config.out / name).is_file() for name in names)


def cmd_sweep(config: RunConfig):
    if config.synthetic and not _graph_artifacts_present(config):
        logger.info("synthetic run: generating inputs and graph artifacts first")
        cmd_synth(config)
        cmd_ingest(config)
        cmd_graph(config)

    dataset = load_dataset(config)
    grid = config.grid()
    experiment = config.experiment_config()
    report = run_univariate_sweep(dataset, grid, experiment)
    if "plsr" in grid.models:
        if config.region_source == "zip":
            partition = partition_by_zip(dataset.stations)
        else:
            partition = read_partition(_require(config.out / settings.REGIONS_FILE))
        report = report.merge(run_multivariate_sweep(dataset, partition, grid, experiment))
    if not report.cells:
        raise ValidationError("no station or region had enough rows for any horizon")

    out, stamp = config.out, config.stamp
    report.write(out / settings.REPORT_ROWS_FILE, out / settings.REPORT_SUMMARY_FILE, stamp)
    export_to_csv(report.skipped_frame(), out / settings.REPORT_SKIPPED_FILE, stamp)
    table = compare_models([report], experiment.compare_trees)
    table.to_csv(out / settings.COMPARISON_FILE, stamp)
    tree_tables = {}
    for model in ("rf", "lsboost"):
        if any(cell.model == model for cell in report.cells):
            tree_tables[model] = tree_count_table(report, model)
            frame = tree_tables[model].rename(columns=str).rename_axis(columns=None).reset_index()
            export_to_csv(frame, out / settings.TREE_TABLE_FILE.format(model=model), stamp)

    print(report.summary_frame().to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    print()
    print("MAE (bikes/station) by horizon:")
    print(table.to_console())
    for model, pivot in tree_tables.items():
        print()
        print(f"{model} MAE by horizon (rows) and tree count (columns):")
        print(pivot.to_string(float_format=lambda v: f"{v:.4f}"))
    return report


def cmd_compare(config: RunConfig, report_files=None):
    files = [Path(f) for f in report_files] if report_files else [config.out / settings.REPORT_SUMMARY_FILE]
    reports = [report_from_summary(read_exported_csv(_require(f))) for f in files]
    table = compare_models(reports, config.compare_trees)
    table.to_csv(config.out / settings.COMPARISON_FILE, config.stamp)
    print(table.to_console())
    return table


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value run configuration file")
    common.add_argument("--out", dest="out_dir", help="output directory for every artifact")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--workers", type=int, help="parallel workers (default: all cores)")
    common.add_argument("--delta", dest="horizons", help="comma-separated horizons in minutes")
    common.add_argument("--trees", dest="tree_counts", help="comma-separated tree counts")
    common.add_argument("--models", help="comma-separated subset of rf,lsboost,plsr,mean")
    common.add_argument("--grid-step", dest="grid_step", type=int, help="grid spacing in minutes")
    common.add_argument("--train-fraction", dest="train_fraction", type=float,
                        help="share of the earliest rows used for training")
    common.add_argument("--k", type=int, help="in-degree neighbours per station (default: 10, at most stations - 1)")
    common.add_argument("--threshold", dest="threshold_fraction", type=float,
                        help="edge cutoff as a fraction of all trips")
    common.add_argument("--region-source", dest="region_source", choices=REGION_SOURCES,
                        help="derive regions from the trip graph or from ZIP codes")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(prog="bss-forecast",
                                     description="Bike-share station availability forecasting toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="generate a synthetic network")
    sub.add_parser("ingest", parents=[common], help="parse raw files and detect stock changes")
    sub.add_parser("graph", parents=[common], help="trip adjacency, neighbours and regions")
    features = sub.add_parser("features", parents=[common], help="export design matrices")
    features.add_argument("--station", type=int, action="append", dest="stations",
                          help="station id (repeatable; default every station)")
    features.add_argument("--one-hot", action="store_true", help="one-hot weather event columns")
    sub.add_parser("sweep", parents=[common], help="run the horizon and tree-count sweeps")
    compare = sub.add_parser("compare", parents=[common], help="align model MAE by horizon")
    compare.add_argument("reports", nargs="*", help="report summary CSV files")
    return parser


_OVERRIDES = ("out_dir", "seed", "workers", "horizons", "tree_counts", "models", "grid_step",
              "train_fraction", "k", "threshold_fraction", "region_source")


def resolve_config(args) -> RunConfig:
    config = RunConfig.from_file(args.config) if args.config else RunConfig()
    config = config.with_overrides({key: getattr(args, key, None) for key in _OVERRIDES})
    return config.validate()


def run(args) -> int:
    config = resolve_config(args)
    config.write_effective()
    logger.info("config hash %s, seed %d", config.config_hash, config.seed)
    if args.command == "synth":
        cmd_synth(config)
    elif args.command == "ingest":
        cmd_ingest(config)
    elif args.command == "graph":
        cmd_graph(config)
    elif args.command == "features":
        cmd_features(config, args.stations, args.one_hot)
    elif args.command == "sweep":
        cmd_sweep(config)
    elif args.command == "compare":
        cmd_compare(config, args.reports)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format=LOG_FORMAT)
    try:
        return run(args)
    except (BikeShareError, OSError) as exc:
        logger.error("%s", exc)
        print(f"Error: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    except Exception:
        logger.exception("unexpected failure")
        return 1
