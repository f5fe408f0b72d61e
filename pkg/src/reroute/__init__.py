"""Predict FAA reroute advisories from gridded weather forecasts."""

from .advisory import (
    AdvisoryRecord,
    LabelTimeline,
    PredictionTarget,
    RouteEntry,
    build_label_timeline,
    ingest_directory,
    parse_advisory,
)
from .errors import RerouteError
from .evaluation import Metrics, SelectionReport, accuracy, cross_validate_and_select, reroute_coverage, reroute_detection_score
from .features import CoarseGridSpec, MergedDataset, NormalizationStats
from .models import LearnerSpec, TrainedModel, load_model, save_model
from .resample import ResampleConfig, find_tomek_links, smote_oversample, smote_tomek
from .synthgen import ScenarioConfig, generate_scenario
from .weather import ForecastGrid, GridManifest, GridStore, load_grid, store_grid

__version__ = "0.1.0"
