"""Horizon and tree-count sweeps, the per-region PLSR sweep and model comparison.

Every (station or region, horizon) cell is an independent job seeded from
(master seed, unit id, horizon), so the reports do not depend on the order
in which cells run or on the worker count.
"""

import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from functools import reduce
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from config import settings
from src.core.features import (DatasetSplit, WeatherTable, build_region_rows, build_station_matrix,
                               chronological_split)
from src.core.graph import NeighborSet, RegionPartition
from src.core.ingest import EventStore, StationMeta
from src.experiments.metrics import MaeReport, mae_per_station
from src.models.ensembles import fit_forest, fit_lsboost, staged_boost_predictions, staged_forest_predictions
from src.models.plsr import fit_plsr, predict_plsr, select_components
from src.models.tree import TrainConfig
from src.utils.data_processor import export_to_csv
from src.utils.errors import AlignmentError, DegenerateSplitError, InvariantError, LookupFailure, ValidationError

logger = logging.getLogger(__name__)

TREE_MODELS = ("rf", "lsboost")
BASELINE = "mean"
KNOWN_MODELS = TREE_MODELS + ("plsr", BASELINE)
CV_SIZE = "cv"


def _strictly_increasing(values):
    return all(v > 0 for v in values) and all(b > a for a, b in zip(values, values[1:]))


@dataclass(frozen=True)
class SweepGrid:
    horizons: Tuple[int, ...] = tuple(settings.HORIZONS_MINUTES)
    tree_counts: Tuple[int, ...] = tuple(settings.TREE_COUNTS)
    models: Tuple[str, ...] = tuple(settings.MODELS)

    def __post_init__(self):
        object.__setattr__(self, "horizons", tuple(int(h) for h in self.horizons))
        object.__setattr__(self, "tree_counts", tuple(int(t) for t in self.tree_counts))
        object.__setattr__(self, "models", tuple(self.models))
        if not self.horizons or not _strictly_increasing(self.horizons):
            raise ValidationError(f"horizons must be positive and strictly increasing, got {list(self.horizons)}")
        if not self.tree_counts or not _strictly_increasing(self.tree_counts):
            raise ValidationError(
                f"tree counts must be positive and strictly increasing, got {list(self.tree_counts)}")
        unknown = [m for m in self.models if m not in KNOWN_MODELS]
        if unknown or not self.models:
            raise ValidationError(f"unknown models {unknown}; choose from {list(KNOWN_MODELS)}")

    @property
    def univariate_models(self):
        return [m for m in self.models if m != "plsr"]


@dataclass(frozen=True)
class ExperimentConfig:
    grid_step: int = settings.GRID_STEP_MINUTES
    train_fraction: float = settings.TRAIN_FRACTION
    seed: int = settings.SEED
    workers: int = 1
    forest: TrainConfig = field(default_factory=TrainConfig)
    boost: TrainConfig = field(default_factory=lambda: TrainConfig(bootstrap=False))
    min_train_rows: int = settings.MIN_TRAIN_ROWS
    plsr_folds: int = settings.PLSR_FOLDS
    max_components: int = settings.PLSR_MAX_COMPONENTS
    compare_trees: Optional[int] = None

    def __post_init__(self):
        if self.workers < 1:
            raise ValidationError(f"workers must be >= 1, got {self.workers}")
        if self.min_train_rows < 1:
            raise ValidationError(f"min_train_rows must be >= 1, got {self.min_train_rows}")


@dataclass
class BikeShareDataset:
    """Everything the sweeps read: stations, change events, weather and neighbour sets."""
    stations: List[StationMeta]
    events: EventStore
    weather: WeatherTable
    neighbors: Dict[int, NeighborSet]

    def zip_of(self, station_id):
        for station in self.stations:
            if station.station_id == station_id:
                return station.zip_code
        return ""

    def region_zip(self, region):
        """Modal ZIP of the region's stations; ties go to the smallest code."""
        tally = Counter(self.zip_of(sid) for sid in region)
        return min(tally.items(), key=lambda item: (-item[1], item[0]))[0]

    @property
    def station_ids(self):
        return sorted(s.station_id for s in self.stations)


def cell_seed(seed, unit_id, delta):
    state = np.random.SeedSequence([int(seed), int(unit_id) & 0xFFFFFFFF, int(delta)]).generate_state(1)
    return int(state[0])


def _run_jobs(function, jobs, workers):
    if workers == 1:
        return [function(*job) for job in jobs]
    return Parallel(n_jobs=workers)(delayed(function)(*job) for job in jobs)


def check_split(split: DatasetSplit):
    """Train and test share one feature layout and train rows all precede test rows."""
    train, test = split.train, split.test
    if train.schema.feature_names != test.schema.feature_names:
        raise InvariantError("train and test feature columns differ")
    if len(train) and len(test) and train.times.max() >= test.times.min():
        raise InvariantError(f"train rows reach {train.times.max()} but test rows start at {test.times.min()}")
    return split


def _split_or_reason(build, config, min_rows):
    try:
        design = build()
    except LookupFailure as exc:
        return None, str(exc)
    if len(design) == 0:
        return None, "no usable rows"
    try:
        split = chronological_split(design, config.train_fraction)
    except DegenerateSplitError as exc:
        return None, str(exc)
    if len(split.train) < min_rows or len(split.test) == 0:
        return None, f"too few rows ({len(split.train)} train, {len(split.test)} test)"
    return check_split(split), None


def _station_job(dataset: BikeShareDataset, station_id, delta, grid: SweepGrid, config: ExperimentConfig):
    neighbors = dataset.neighbors.get(station_id)
    if neighbors is None:
        return station_id, delta, "no neighbour set"
    split, reason = _split_or_reason(
        lambda: build_station_matrix(dataset.events, dataset.weather, neighbors, station_id,
                                     config.grid_step, delta, dataset.zip_of(station_id)),
        config, config.min_train_rows,
    )
    if reason:
        return station_id, delta, reason

    train, test = split.train, split.test
    seed = cell_seed(config.seed, station_id, delta)
    largest = grid.tree_counts[-1]
    outputs = {}
    if "rf" in grid.models:
        forest = fit_forest(train.X, train.y, replace(config.forest, n_trees=largest, seed=seed))
        for size, prediction in staged_forest_predictions(forest, test.X, grid.tree_counts).items():
            outputs[("rf", size)] = prediction
    if "lsboost" in grid.models:
        boost = fit_lsboost(train.X, train.y, replace(config.boost, n_trees=largest, seed=seed, bootstrap=False))
        for size, prediction in staged_boost_predictions(boost, test.X, grid.tree_counts).items():
            outputs[("lsboost", size)] = prediction
    if BASELINE in grid.models:
        outputs[(BASELINE, 0)] = np.full(len(test), float(np.mean(train.y)))
    return station_id, delta, (test.y, outputs)


def run_univariate_sweep(dataset: BikeShareDataset, grid: SweepGrid = None,
                         config: ExperimentConfig = None) -> MaeReport:
    """Per station and horizon: build rows, split chronologically, fit the tree
    models once at the largest tree count and score every smaller count."""
    grid = grid or SweepGrid()
    config = config or ExperimentConfig()
    if len(dataset.stations) < 2:
        raise ValidationError("a sweep needs at least two stations")
    report = MaeReport(horizons=list(grid.horizons), tree_counts=list(grid.tree_counts), seed=config.seed)
    if not grid.univariate_models:
        return report

    jobs = [(dataset, sid, delta, grid, config) for delta in grid.horizons for sid in dataset.station_ids]
    logger.info("univariate sweep: %d cells on %d workers", len(jobs), config.workers)
    results = _run_jobs(_station_job, jobs, config.workers)

    collected: Dict[Tuple[str, int, int], List] = {}
    for station_id, delta, outcome in results:
        if isinstance(outcome, str):
            logger.warning("station %s delta %d skipped: %s", station_id, delta, outcome)
            report.skipped.append((station_id, delta, outcome))
            continue
        truths, outputs = outcome
        for (model, size), prediction in outputs.items():
            collected.setdefault((model, delta, size), []).append((station_id, prediction, truths))

    for (model, delta, size), parts in sorted(collected.items()):
        cell = mae_per_station(
            np.concatenate([p for _, p, _ in parts]),
            np.concatenate([t for _, _, t in parts]),
            np.concatenate([np.full(len(t), sid) for sid, _, t in parts]),
            model, delta, size,
        )
        report.add(cell)
        report.fits[(model, delta)] = len(parts)
    return report


def _region_job(dataset: BikeShareDataset, region_id, region, delta, config: ExperimentConfig):
    targets = sorted(region)
    unknown = [sid for sid in targets if sid not in dataset.neighbors]
    if unknown:
        return region_id, delta, f"no neighbour set for stations {unknown}"
    split, reason = _split_or_reason(
        lambda: build_region_rows(dataset.events, dataset.weather, region, dataset.neighbors,
                                  config.grid_step, delta, dataset.region_zip(region)),
        config, max(config.min_train_rows, 2 * config.plsr_folds),
    )
    if reason:
        return region_id, delta, reason
    train, test = split.train, split.test
    try:
        selection = select_components(train.X, train.y, config.plsr_folds, config.max_components)
    except ValidationError as exc:
        return region_id, delta, str(exc)
    model = fit_plsr(train.X, train.y, selection.chosen)
    prediction = predict_plsr(model, test.X).reshape(len(test), -1)
    return region_id, delta, (targets, test.y.reshape(len(test), -1), prediction, selection.chosen)


def run_multivariate_sweep(dataset: BikeShareDataset, partition: RegionPartition, grid: SweepGrid = None,
                           config: ExperimentConfig = None) -> MaeReport:
    """One PLSR model per region and horizon; MAE is read off each response column."""
    grid = grid or SweepGrid()
    config = config or ExperimentConfig()
    report = MaeReport(horizons=list(grid.horizons), seed=config.seed)
    if "plsr" not in grid.models:
        return report
    if not partition.regions:
        raise ValidationError("partition has no regions")

    jobs = [(dataset, rid, region, delta, config)
            for delta in grid.horizons for rid, region in enumerate(partition.regions)]
    logger.info("multivariate sweep: %d regions x %d horizons", len(partition.regions), len(grid.horizons))
    results = _run_jobs(_region_job, jobs, config.workers)

    by_delta: Dict[int, List] = {}
    for region_id, delta, outcome in results:
        if isinstance(outcome, str):
            logger.warning("region %s delta %d skipped: %s", region_id, delta, outcome)
            report.skipped.append((region_id, delta, outcome))
            continue
        by_delta.setdefault(delta, []).append(outcome)

    for delta, parts in sorted(by_delta.items()):
        predictions, truths, station_ids, chosen = [], [], [], {}
        for targets, Y, P, components in parts:
            predictions.append(P.ravel())
            truths.append(Y.ravel())
            station_ids.append(np.broadcast_to(np.asarray(targets), Y.shape).ravel())
            chosen.update({sid: components for sid in targets})
        cell = mae_per_station(np.concatenate(predictions), np.concatenate(truths),
                               np.concatenate(station_ids), "plsr", delta, CV_SIZE)
        for sid, err in cell.per_station.items():
            err.size = chosen[sid]
        report.add(cell)
        report.fits[("plsr", delta)] = len(parts)
        logger.info("plsr delta %d: %d region models, components %s",
                    delta, len(parts), sorted(set(chosen.values())))
    return report


def tree_count_table(report: MaeReport, model) -> pd.DataFrame:
    """Bike-scale MAE with one row per horizon and one column per tree count."""
    summary = report.summary_frame()
    summary = summary[summary["model"] == model]
    if summary.empty:
        raise LookupFailure(f"report has no cells for model {model}")
    return summary.pivot(index="delta_minutes", columns="trees_or_components", values="mae_bikes")


def _model_order(models):
    order = {m: i for i, m in enumerate(KNOWN_MODELS)}
    return sorted(models, key=lambda m: (order.get(m, len(order)), m))


@dataclass
class ComparisonTable:
    frame: pd.DataFrame  # rows delta_minutes, one column per model
    sizes: Dict[Tuple[str, int], object]

    @property
    def shape(self):
        return self.frame.shape

    def to_csv(self, filename, stamp=None):
        return export_to_csv(self.frame.reset_index(), filename, stamp)

    def to_console(self):
        return self.frame.to_string(float_format=lambda v: f"{v:.4f}")


def compare_models(reports: Sequence[MaeReport], tree_count=None) -> ComparisonTable:
    """Align model MAE by horizon.

    Tree models use the cell at ``tree_count`` when given, otherwise their
    best tree count at each horizon (ties to the fewer trees).
    """
    if isinstance(reports, MaeReport):
        reports = [reports]
    if not reports:
        raise ValidationError("nothing to compare")
    merged = reduce(MaeReport.merge, reports)
    models = _model_order(merged.models())
    horizons = sorted(set(merged.horizons) | {cell.delta for cell in merged.cells})
    if not models or not horizons:
        raise ValidationError("reports contain no cells")

    values: Dict[str, List[float]] = {model: [] for model in models}
    sizes = {}
    missing = []
    for model in models:
        for delta in horizons:
            candidates = [c for c in merged.cells if c.model == model and c.delta == delta]
            if tree_count is not None and model in TREE_MODELS:
                candidates = [c for c in candidates if c.size == tree_count]
            if not candidates:
                missing.append((model, delta))
                continue
            best = min(candidates, key=lambda c: (c.mae_bikes, str(c.size).zfill(8)))
            values[model].append(best.mae_bikes)
            sizes[(model, delta)] = best.size
    if missing:
        raise AlignmentError(missing)

    frame = pd.DataFrame(values, index=pd.Index(horizons, name="delta_minutes"), columns=models)
    return ComparisonTable(frame, sizes)
