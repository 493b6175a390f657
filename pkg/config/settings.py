GRID_STEP_MINUTES = 15
HORIZONS_MINUTES = [15, 30, 60, 90, 120]
TREE_COUNTS = [20, 60, 100, 140, 180]
MODELS = ["rf", "lsboost", "plsr"]
SEED = 42
TRAIN_FRACTION = 0.8
MIN_TRAIN_ROWS = 20

# Trip graph
NEIGHBOR_COUNT = 10
REGION_THRESHOLD_FRACTION = 0.001

# Tree learners
MIN_LEAF_SIZE = 5
MAX_DEPTH = 20
BOOST_MAX_DEPTH = 6
SHRINKAGE = 1.0

# PLSR
PLSR_FOLDS = 5
PLSR_MAX_COMPONENTS = 10
NIPALS_TOLERANCE = 1e-10
NIPALS_MAX_ITER = 500
NIPALS_COVARIANCE_SLACK = 1e-3

# Weather normalization
TRACE_PRECIPITATION = 0.01
WEATHER_EVENTS = ["none", "fog", "rain", "fog_rain", "thunderstorm", "other"]

# ZIP of each city's weather record in the public Bay Area release
CITY_ZIP_CODES = {
    "San Francisco": "94107",
    "Redwood City": "94063",
    "Palo Alto": "94301",
    "Mountain View": "94041",
    "San Jose": "95113",
}

# Input file names under BSS_DATA_DIR
STATION_FILE = "station.csv"
STATUS_FILE = "status.csv"
TRIP_FILE = "trip.csv"
WEATHER_FILE = "weather.csv"
DATA_DIR_ENV = "BSS_DATA_DIR"

# Artifact names under the output directory
EVENTS_FILE = "events.csv"
STATIONS_OUT_FILE = "stations.csv"
WEATHER_OUT_FILE = "weather_daily.csv"
INGEST_SUMMARY_FILE = "ingest_summary.json"
ADJACENCY_FILE = "adjacency.csv"
NEIGHBORS_FILE = "neighbors.csv"
REGIONS_FILE = "regions.csv"
ZIP_PURITY_FILE = "zip_purity.csv"
SCHEMA_FILE = "schema.json"
REPORT_ROWS_FILE = "report_rows.csv"
REPORT_SUMMARY_FILE = "report_summary.csv"
REPORT_SKIPPED_FILE = "report_skipped.csv"
TREE_TABLE_FILE = "tree_counts_{model}.csv"
COMPARISON_FILE = "comparison.csv"
EFFECTIVE_CONFIG_FILE = "effective_config.txt"
SYNTHETIC_DIR = "data"
