"""Run configuration: a ``key = value`` text file plus command-line overrides."""

import logging
import os
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Dict, Optional, Tuple

from joblib import cpu_count

from config import settings
from src.experiments.sweeps import ExperimentConfig, SweepGrid
from src.experiments.synthetic import SyntheticConfig
from src.models.tree import TrainConfig
from src.utils.data_processor import config_hash
from src.utils.errors import ValidationError

logger = logging.getLogger(__name__)

REGION_SOURCES = ("trips", "zip")
# excluded from the config hash: they do not change any number
_UNHASHED = ("out_dir", "workers")


def _int_list(text):
    return tuple(int(part) for part in str(text).split(",") if part.strip())


def _str_list(text):
    return tuple(part.strip() for part in str(text).split(",") if part.strip())


def _bool(text):
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional_int(text):
    return None if str(text).strip().lower() in ("", "none", "best") else int(text)


@dataclass(frozen=True)
class RunConfig:
    data_dir: str = ""
    station_file: str = settings.STATION_FILE
    status_file: str = settings.STATUS_FILE
    trip_file: str = settings.TRIP_FILE
    weather_file: str = settings.WEATHER_FILE
    out_dir: str = "output"
    synthetic: bool = False
    synthetic_stations: int = 10
    synthetic_regions: int = 2
    synthetic_days: int = 14
    seed: int = settings.SEED
    workers: int = 0  # 0 means every available core
    grid_step: int = settings.GRID_STEP_MINUTES
    horizons: Tuple[int, ...] = tuple(settings.HORIZONS_MINUTES)
    tree_counts: Tuple[int, ...] = tuple(settings.TREE_COUNTS)
    models: Tuple[str, ...] = tuple(settings.MODELS)
    train_fraction: float = settings.TRAIN_FRACTION
    k: Optional[int] = None  # None: NEIGHBOR_COUNT capped at n_stations - 1
    threshold_fraction: float = settings.REGION_THRESHOLD_FRACTION
    region_source: str = "trips"
    min_leaf_size: int = settings.MIN_LEAF_SIZE
    max_depth: int = settings.MAX_DEPTH
    boost_max_depth: int = settings.BOOST_MAX_DEPTH
    shrinkage: float = settings.SHRINKAGE
    min_train_rows: int = settings.MIN_TRAIN_ROWS
    plsr_folds: int = settings.PLSR_FOLDS
    max_components: int = settings.PLSR_MAX_COMPONENTS
    compare_trees: Optional[int] = None
    include_missing_weather: bool = False

    @classmethod
    def from_file(cls, filename) -> "RunConfig":
        path = Path(filename)
        if not path.is_file():
            raise ValidationError(f"config file not found: {path}")
        values = {}
        for number, raw in enumerate(path.read_text().splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"{path}:{number}: expected 'key = value', got {raw.strip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            values[key] = value
        return cls().with_overrides(values)

    def with_overrides(self, overrides) -> "RunConfig":
        """Apply textual or typed overrides; ``None`` values are ignored."""
        known = {f.name: f for f in fields(self)}
        changes = {}
        for key, value in overrides.items():
            if value is None:
                continue
            if key not in known:
                raise ValidationError(f"unknown config key '{key}'")
            try:
                changes[key] = _convert(key, known[key].type, value)
            except (TypeError, ValueError) as exc:
                raise ValidationError(f"bad value for '{key}': {exc}")
        return replace(self, **changes)

    def validate(self, require_inputs=False) -> "RunConfig":
        if self.region_source not in REGION_SOURCES:
            raise ValidationError(f"region_source must be one of {REGION_SOURCES}, got {self.region_source!r}")
        if not 0 < self.train_fraction < 1:
            raise ValidationError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")
        if self.grid_step <= 0:
            raise ValidationError(f"grid_step must be positive, got {self.grid_step}")
        if self.k is not None and self.k < 1:
            raise ValidationError(f"k must be positive, got {self.k}")
        self.grid()
        self.experiment_config()
        if require_inputs:
            for path in self.input_paths().values():
                if not path.is_file():
                    raise ValidationError(f"input file not found: {path}")
        out = Path(self.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        if not os.access(out, os.W_OK):
            raise ValidationError(f"output directory is not writable: {out}")
        return self

    @property
    def out(self) -> Path:
        return Path(self.out_dir)

    def data_root(self) -> Path:
        if self.synthetic:
            return self.out / settings.SYNTHETIC_DIR
        return Path(self.data_dir or os.environ.get(settings.DATA_DIR_ENV, "") or ".")

    def input_paths(self) -> Dict[str, Path]:
        root = self.data_root()
        names = {
            "station": self.station_file,
            "status": self.status_file,
            "trip": self.trip_file,
            "weather": self.weather_file,
        }
        if self.synthetic:
            names = {"station": settings.STATION_FILE, "status": settings.STATUS_FILE,
                     "trip": settings.TRIP_FILE, "weather": settings.WEATHER_FILE}
        return {kind: (Path(name) if Path(name).is_absolute() else root / name) for kind, name in names.items()}

    def neighbor_count(self, n_stations) -> int:
        if self.k is not None:
            return self.k
        k = min(settings.NEIGHBOR_COUNT, max(1, n_stations - 1))
        if k < settings.NEIGHBOR_COUNT:
            logger.info("k not set: using %d neighbours for %d stations", k, n_stations)
        return k

    def effective_workers(self) -> int:
        return self.workers if self.workers > 0 else max(1, cpu_count())

    def grid(self) -> SweepGrid:
        return SweepGrid(self.horizons, self.tree_counts, self.models)

    def experiment_config(self) -> ExperimentConfig:
        forest = TrainConfig(min_leaf_size=self.min_leaf_size, max_depth=self.max_depth, seed=self.seed)
        boost = TrainConfig(min_leaf_size=self.min_leaf_size, max_depth=self.boost_max_depth,
                            shrinkage=self.shrinkage, bootstrap=False, seed=self.seed)
        return ExperimentConfig(
            grid_step=self.grid_step,
            train_fraction=self.train_fraction,
            seed=self.seed,
            workers=self.effective_workers(),
            forest=forest,
            boost=boost,
            min_train_rows=self.min_train_rows,
            plsr_folds=self.plsr_folds,
            max_components=self.max_components,
            compare_trees=self.compare_trees,
        )

    def synthetic_config(self) -> SyntheticConfig:
        return SyntheticConfig(
            n_stations=self.synthetic_stations,
            n_regions=self.synthetic_regions,
            span_days=self.synthetic_days,
            seed=self.seed,
        )

    def lines(self, hashed_only=False):
        result = []
        for f in fields(self):
            if hashed_only and f.name in _UNHASHED:
                continue
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            elif isinstance(value, bool):
                value = str(value).lower()
            elif value is None:
                value = "none"
            result.append((f.name, str(value)))
        return sorted(result)

    @property
    def config_hash(self) -> str:
        return config_hash(dict(self.lines(hashed_only=True)))

    @property
    def stamp(self):
        return self.seed, self.config_hash

    def write_effective(self) -> Path:
        path = self.out / settings.EFFECTIVE_CONFIG_FILE
        path.parent.mkdir(parents=True, exist_ok=True)
        body = "".join(f"{key} = {value}\n" for key, value in self.lines())
        path.write_text(f"# config_hash = {self.config_hash}\n{body}")
        logger.debug("effective config written to %s", path)
        return path


def _convert(key, annotation, value):
    if not isinstance(value, str):
        return tuple(value) if isinstance(value, list) else value
    text = value.strip()
    if key in ("horizons", "tree_counts"):
        return _int_list(text)
    if key == "models":
        return _str_list(text)
    if key in ("compare_trees", "k"):
        return _optional_int(text)
    kind = annotation if isinstance(annotation, type) else str
    if kind is bool:
        return _bool(text)
    if kind is int:
        return int(text)
    if kind is float:
        return float(text)
    return text
