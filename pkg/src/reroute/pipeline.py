"""Configuration and orchestration: wrangle, resample, select, persist.

A pipeline configuration is a YAML (or JSON) mapping::

    mode: per-advisory-name        # or per-artcc
    bucket_minutes: 15
    interpolation_step: 15         # minutes; per-artcc default is 1
    coarse_grid: {rows: 4, cols: 4, box: [24, 50, -125, -66]}
    statistics: [mean]
    parameters: [PW, CAPE, APT, CIN]
    normalization: {source: training}   # or {ranges: {PW: [0, 80], ...}}
    advisories: advisories/             # text files or a .jsonl curated store
    grids: grids/                       # directory of grid directories
    regions: regions.geojson            # ARTCC polygons (per-artcc mode)
    targets: [{kind: ARTCC, key: ZNY}]
    range: {start: 2019-06-01T00:00Z, end: 2019-09-29T00:00Z}
    learners: [{preset: rf-paper, n_estimators: 200}, {preset: extra-paper, n_estimators: 200}]
    resample: {k_neighbors: 5, target_ratio: 1.0, tomek_removal: both}
    cv: {k: 5}
    seed: 64
    output: out/
    registry: out/registry.json

Relative paths are resolved against the configuration file's directory.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml

from .advisory import (
    LabelTimeline,
    PredictionTarget,
    TargetKind,
    build_label_timeline,
    from_datetime64,
    load_advisories,
    parse_utc,
    to_datetime64,
)
from .errors import CoverageGap, InvalidConfig, RangeUncovered, SchemaMismatch
from .evaluation import SelectionReport, cross_validate_and_select
from .features import (
    CONUS_BOX,
    STATISTICS,
    CoarseGridSpec,
    FeatureRows,
    FeatureSchema,
    MergedDataset,
    NormalizationStats,
    aggregate_values,
    assemble_dataset,
    fit_normalization,
    normalize_array,
    partition_coarse_grid,
)
from .models import LearnerSpec, TrainedModel, apply_threshold, predict_proba, save_model
from .resample import ResampleConfig
from .weather import (
    PARAMETERS,
    BoundingBox,
    ForecastGrid,
    GridStore,
    Polygon,
    iter_interpolated,
    load_grid,
    load_regions,
    slice_region,
)

logger = logging.getLogger(__name__)

MODES = ("per-advisory-name", "per-artcc")


@dataclass(frozen=True)
class FeatureConfig:
    """Everything needed to rebuild a model's feature rows from raw grids."""

    mode: str = "per-advisory-name"
    bucket_minutes: int = 15
    interpolation_step: int = 15
    rows: int = 4
    cols: int = 4
    box: BoundingBox = CONUS_BOX
    statistics: tuple[str, ...] = ("mean",)
    parameters: tuple[str, ...] = PARAMETERS

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidConfig(f"mode must be one of {MODES}")
        if self.bucket_minutes <= 0 or 60 % self.bucket_minutes:
            raise InvalidConfig("bucket_minutes must divide 60")
        if self.interpolation_step <= 0 or self.bucket_minutes % self.interpolation_step:
            raise InvalidConfig("interpolation_step must divide bucket_minutes")
        bad = [s for s in self.statistics if s not in STATISTICS]
        if bad:
            raise InvalidConfig(f"unknown statistics {bad}")
        bad = [p for p in self.parameters if p not in PARAMETERS]
        if bad:
            raise InvalidConfig(f"unknown parameters {bad}")

    def to_dict(self) -> dict:
        b = self.box
        return {"mode": self.mode, "bucket_minutes": self.bucket_minutes,
                "interpolation_step": self.interpolation_step,
                "coarse_grid": {"rows": self.rows, "cols": self.cols,
                                "box": [b.lat_min, b.lat_max, b.lon_min, b.lon_max]},
                "statistics": list(self.statistics), "parameters": list(self.parameters)}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureConfig":
        mode = d.get("mode", "per-advisory-name")
        per_artcc = mode == "per-artcc"
        grid = d.get("coarse_grid") or {}
        box = grid.get("box")
        return cls(
            mode=mode,
            bucket_minutes=int(d.get("bucket_minutes", 15)),
            interpolation_step=int(d.get("interpolation_step", 1 if per_artcc else 15)),
            rows=int(grid.get("rows", 1 if per_artcc else 4)),
            cols=int(grid.get("cols", 1 if per_artcc else 4)),
            box=BoundingBox(*map(float, box)) if box else CONUS_BOX,
            statistics=tuple(d.get("statistics") or (STATISTICS if per_artcc else ("mean",))),
            parameters=tuple(d.get("parameters") or PARAMETERS),
        )


@dataclass
class PipelineConfig:
    features: FeatureConfig
    targets: list[PredictionTarget]
    learners: list[LearnerSpec]
    resample: ResampleConfig
    advisories: Path | None = None
    grids: Path | None = None
    regions: Path | None = None
    output: Path = Path("out")
    registry: Path | None = None
    start: datetime | None = None
    end: datetime | None = None
    normalization: NormalizationStats | None = None
    cv_k: int = 5
    seed: int = 0
    n_jobs: int = 1
    evaluation_mode: str = "bucket"
    horizon_hours: int = 72
    raw: dict = field(default_factory=dict)

    @property
    def registry_path(self) -> Path:
        return self.registry or self.output / "registry.json"


def _as_path(base: Path, value) -> Path | None:
    if value is None:
        return None
    p = Path(value)
    return p if p.is_absolute() else base / p


def _as_time(value) -> datetime | None:
    if value is None:
        return None
    if isinstance(value, datetime):
        return value if value.tzinfo else value.replace(tzinfo=timezone.utc)
    return parse_utc(str(value))


def config_from_dict(data: dict, base: Path = Path("."), seed: int | None = None) -> PipelineConfig:
    if not isinstance(data, dict):
        raise InvalidConfig("configuration must be a mapping")
    try:
        feats = FeatureConfig.from_dict(data)
        targets = [PredictionTarget(t["kind"], t["key"]) for t in data.get("targets") or []]
        if not targets:
            raise InvalidConfig("configuration lists no targets")
        if feats.mode == "per-artcc" and any(t.kind is not TargetKind.ARTCC for t in targets):
            raise InvalidConfig("per-artcc mode needs ARTCC targets")
        seed = int(data.get("seed", 0)) if seed is None else seed
        learners = [LearnerSpec.from_config(e) for e in data.get("learners") or ["rf-paper"]]
        rs = data.get("resample") or {}
        resample = ResampleConfig(int(rs.get("k_neighbors", 5)), float(rs.get("target_ratio", 1.0)),
                                  int(rs.get("seed", seed)), rs.get("tomek_removal", "both"))
        norm = data.get("normalization") or {}
        stats = NormalizationStats.from_dict(norm["ranges"]) if "ranges" in norm else None
        rng = data.get("range") or {}
        return PipelineConfig(
            features=feats,
            targets=targets,
            learners=learners,
            resample=resample,
            advisories=_as_path(base, data.get("advisories")),
            grids=_as_path(base, data.get("grids")),
            regions=_as_path(base, data.get("regions")),
            output=_as_path(base, data.get("output", "out")),
            registry=_as_path(base, data.get("registry")),
            start=_as_time(rng.get("start")),
            end=_as_time(rng.get("end")),
            normalization=stats,
            cv_k=int((data.get("cv") or {}).get("k", 5)),
            seed=seed,
            n_jobs=int(data.get("n_jobs", 1)),
            evaluation_mode=data.get("evaluation_mode", "bucket"),
            horizon_hours=int(data.get("horizon_hours", 72)),
            raw=data,
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, InvalidConfig):
            raise
        raise InvalidConfig(str(exc)) from exc


def load_config(path: str | Path, seed: int | None = None) -> PipelineConfig:
    path = Path(path)
    if not path.is_file():
        raise InvalidConfig(f"configuration file {path} not found")
    data = yaml.safe_load(path.read_text())
    return config_from_dict(data, path.parent, seed)


# ---------------------------------------------------------------------------
# feature extraction

def region_for(features: FeatureConfig, target: PredictionTarget,
               regions: dict[str, Polygon] | None) -> tuple[BoundingBox | Polygon, CoarseGridSpec]:
    if features.mode == "per-artcc":
        if not regions or target.key not in regions:
            raise InvalidConfig(f"no region polygon for {target.key}")
        poly = regions[target.key]
        lat_lo, lat_hi, lon_lo, lon_hi = poly.bounds
        spec = CoarseGridSpec(features.rows, features.cols, BoundingBox(lat_lo, lat_hi, lon_lo, lon_hi),
                              label=target.key)
        return poly, spec
    return features.box, CoarseGridSpec(features.rows, features.cols, features.box)


def region_to_dict(region: BoundingBox | Polygon) -> dict:
    if isinstance(region, Polygon):
        return {"polygon": [list(v) for v in region.vertices], "key": region.key}
    return {"box": list(region.bounds)}


def region_from_dict(d: dict) -> BoundingBox | Polygon:
    if "polygon" in d:
        return Polygon(tuple(tuple(v) for v in d["polygon"]), key=d.get("key", ""))
    return BoundingBox(*d["box"])


def extract_features(
    grids: Sequence[ForecastGrid],
    features: FeatureConfig,
    region: BoundingBox | Polygon,
    coarse: CoarseGridSpec,
    stats: NormalizationStats,
    start: np.datetime64,
    end: np.datetime64,
) -> FeatureRows:
    """Feature rows at interpolation resolution for timestamps in ``[start, end)``.

    Where forecast cycles overlap, the one with the later reference time
    supplies the value.
    """
    stat_names = tuple(features.statistics)
    chunks_ts, chunks_val, chunks_rank = [], [], []
    schema = None
    for rank, grid in enumerate(sorted(grids, key=lambda g: g.manifest.reference_time)):
        vt = grid.manifest.valid_times
        if vt[-1] < start or vt[0] >= end:
            continue
        params = [p for p in features.parameters if p in grid.manifest.parameters]
        if len(params) != len(features.parameters):
            missing = sorted(set(features.parameters) - set(params))
            raise InvalidConfig(f"grid at {vt[0]} lacks parameters {missing}")
        sliced = slice_region(grid, region)
        p_idx = [sliced.manifest.parameters.index(p) for p in features.parameters]
        sliced_vals = sliced.values[p_idx]
        sliced = ForecastGrid(replace(sliced.manifest, parameters=tuple(features.parameters)), sliced_vals)
        cells = partition_coarse_grid(coarse, sliced.manifest.lats, sliced.manifest.lons)
        if schema is None:
            schema = FeatureSchema.build(features.parameters, coarse.cell_ids(), stat_names)
        for ts, vals in iter_interpolated(sliced, features.interpolation_step):
            keep = (ts >= start) & (ts < end)
            if not keep.any():
                continue
            vals = normalize_array(vals[:, keep], features.parameters, stats)
            chunks_ts.append(ts[keep])
            chunks_val.append(aggregate_values(vals, cells, coarse.n_cells, stat_names))
            chunks_rank.append(np.full(int(keep.sum()), rank))
    if not chunks_ts:
        raise RangeUncovered(f"no forecast grid covers {start} .. {end}")
    ts = np.concatenate(chunks_ts)
    vals = np.concatenate(chunks_val)
    rank = np.concatenate(chunks_rank)
    order = np.lexsort((-rank, ts))
    ts, vals = ts[order], vals[order]
    first = np.concatenate([[True], ts[1:] != ts[:-1]])
    return FeatureRows(schema, ts[first], vals[first])


# ---------------------------------------------------------------------------
# training

@dataclass
class TargetResult:
    target: PredictionTarget
    dataset: MergedDataset
    report: SelectionReport
    model: TrainedModel
    model_path: Path
    report_path: Path


def target_slug(target: PredictionTarget) -> str:
    key = re.sub(r"[^A-Za-z0-9]+", "-", target.key).strip("-").lower()
    return f"{target.kind.value.lower()}-{key}"


def _floor(t: np.datetime64, minutes: int) -> np.datetime64:
    m = t.astype("datetime64[m]").astype(np.int64)
    return np.datetime64(m - m % minutes, "m")


def _ceil(t: np.datetime64, minutes: int) -> np.datetime64:
    m = t.astype("datetime64[m]").astype(np.int64)
    return np.datetime64(-((-m) // minutes) * minutes, "m")


def training_range(config: PipelineConfig, store: GridStore) -> tuple[datetime, datetime]:
    bucket = config.features.bucket_minutes
    if config.start is not None and config.end is not None:
        return config.start, config.end
    first = min(m.valid_times[0] for _, m in store.entries)
    last = max(m.valid_times[-1] for _, m in store.entries)
    start = config.start or from_datetime64(_ceil(first, bucket))
    end = config.end or from_datetime64(_floor(last, bucket))
    return start, end


def build_dataset(
    config: PipelineConfig,
    target: PredictionTarget,
    grids: Sequence[ForecastGrid],
    records,
    stats: NormalizationStats,
    start: datetime,
    end: datetime,
    regions: dict[str, Polygon] | None = None,
) -> tuple[MergedDataset, BoundingBox | Polygon]:
    region, coarse = region_for(config.features, target, regions)
    feats = extract_features(grids, config.features, region, coarse, stats,
                             to_datetime64(start), to_datetime64(end))
    labels = build_label_timeline(records, target, config.features.bucket_minutes, start, end)
    return assemble_dataset(feats, labels), region


def train(config: PipelineConfig) -> list[TargetResult]:
    """Run the whole training pipeline for every configured target."""
    if config.grids is None or config.advisories is None:
        raise InvalidConfig("configuration needs 'grids' and 'advisories'")
    records = load_advisories(config.advisories)
    store = GridStore(config.grids)
    start, end = training_range(config, store)
    paths = store.covering(to_datetime64(start), to_datetime64(end))
    grids = [load_grid(p) for p in paths]
    if not grids:
        raise RangeUncovered("no grid covers the training range")
    stats = config.normalization or fit_normalization(grids, config.features.parameters)
    regions = load_regions(config.regions) if config.regions else None
    config.output.mkdir(parents=True, exist_ok=True)

    from .service import ModelRegistry  # registry lives with the service

    results = []
    for target in config.targets:
        dataset, region = build_dataset(config, target, grids, records, stats, start, end, regions)
        logger.info("%s: %d rows, %d positive", target, len(dataset), int(dataset.labels.sum()))
        report, model = cross_validate_and_select(
            dataset, config.learners, config.resample, k=config.cv_k, seed=config.seed,
            evaluation_mode=config.evaluation_mode, bucket_minutes=config.features.bucket_minutes,
            n_jobs=config.n_jobs,
        )
        model.normalization = stats
        model.metadata["target"] = target.to_dict()
        model.metadata["pipeline"] = config.features.to_dict()
        model.metadata["region"] = region_to_dict(region)
        model.metadata["training_range"] = [start.strftime("%Y-%m-%dT%H:%MZ"), end.strftime("%Y-%m-%dT%H:%MZ")]
        slug = target_slug(target)
        model_path = config.output / f"{slug}.model.json"
        report_path = config.output / f"{slug}.report.json"
        save_model(model, model_path)
        report.save(report_path)
        results.append(TargetResult(target, dataset, report, model, model_path, report_path))

    registry = ModelRegistry.load_or_empty(config.registry_path)
    for res in results:
        registry = registry.with_entry(res.target, res.model_path, res.report_path)
    registry.save(config.registry_path)
    return results


def evaluate(config: PipelineConfig) -> list[tuple[PredictionTarget, SelectionReport]]:
    """Cross-validate without touching the registry or writing models."""
    records = load_advisories(config.advisories)
    store = GridStore(config.grids)
    start, end = training_range(config, store)
    grids = [load_grid(p) for p in store.covering(to_datetime64(start), to_datetime64(end))]
    stats = config.normalization or fit_normalization(grids, config.features.parameters)
    regions = load_regions(config.regions) if config.regions else None
    out = []
    for target in config.targets:
        dataset, _ = build_dataset(config, target, grids, records, stats, start, end, regions)
        report, _ = cross_validate_and_select(dataset, config.learners, config.resample, k=config.cv_k,
                                              seed=config.seed, evaluation_mode=config.evaluation_mode,
                                              bucket_minutes=config.features.bucket_minutes,
                                              n_jobs=config.n_jobs)
        out.append((target, report))
    return out


# ---------------------------------------------------------------------------
# inference

@dataclass(frozen=True)
class BucketPrediction:
    bucket_start: datetime
    probability: float
    predicted: int


def predict_range(model: TrainedModel, store: GridStore, start: datetime, end: datetime) -> list[BucketPrediction]:
    """Per-bucket probability and decision over ``[start, end)`` using the model's own feature setup."""
    meta = model.metadata
    if "pipeline" not in meta or "region" not in meta or model.normalization is None:
        raise InvalidConfig("model lacks the pipeline metadata needed for inference")
    features = FeatureConfig.from_dict(meta["pipeline"])
    target = PredictionTarget(meta["target"]["kind"], meta["target"]["key"])
    region = region_from_dict(meta["region"])
    if isinstance(region, Polygon):
        lat_lo, lat_hi, lon_lo, lon_hi = region.bounds
        coarse = CoarseGridSpec(features.rows, features.cols, BoundingBox(lat_lo, lat_hi, lon_lo, lon_hi),
                                label=target.key)
    else:
        coarse = CoarseGridSpec(features.rows, features.cols, features.box)
    t0, t1 = to_datetime64(start), to_datetime64(end)
    grids = [load_grid(p) for p in store.covering(t0, t1)]
    if not grids:
        raise RangeUncovered(f"no forecast grid covers {start:%Y-%m-%dT%H:%MZ} .. {end:%Y-%m-%dT%H:%MZ}")
    feats = extract_features(grids, features, region, coarse, model.normalization, t0, t1)
    if feats.schema.names != model.schema.names:
        raise SchemaMismatch("grid store yields a different feature layout than the model was trained on")
    blank = build_label_timeline([], target, features.bucket_minutes, start, end)
    try:
        dataset = assemble_dataset(feats, blank)
    except CoverageGap as exc:
        raise RangeUncovered(str(exc)) from exc
    probs = predict_proba(model, dataset.rows)
    decisions = apply_threshold(probs, model.threshold)
    step = timedelta(minutes=features.bucket_minutes)
    return [BucketPrediction(start + i * step, float(p), int(d)) for i, (p, d) in enumerate(zip(probs, decisions))]
