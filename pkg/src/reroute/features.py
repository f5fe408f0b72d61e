"""Normalization, coarse-grid aggregation and dataset assembly."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .advisory import LabelTimeline, to_datetime64
from .errors import AllMissing, CoverageGap, DegenerateRange, EmptyCell, UnknownParameter
from .weather import BoundingBox, ForecastGrid, TimeSeriesField

STATISTICS = ("mean", "std", "min", "max", "q1", "median", "q3")
CONUS_BOX = BoundingBox(24.0, 50.0, -125.0, -66.0)


@dataclass(frozen=True)
class NormalizationStats:
    ranges: dict[str, tuple[float, float]]

    def __post_init__(self):
        for p, (lo, hi) in self.ranges.items():
            if not lo < hi:
                raise DegenerateRange(f"{p}: min {lo} >= max {hi}")

    def to_dict(self) -> dict:
        return {p: [lo, hi] for p, (lo, hi) in sorted(self.ranges.items())}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationStats":
        return cls({p: (float(v[0]), float(v[1])) for p, v in d.items()})


@dataclass(frozen=True)
class CoarseGridSpec:
    rows: int
    cols: int
    box: BoundingBox = CONUS_BOX
    label: str = ""  # used as the cell id of a 1x1 grid

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("coarse grid needs at least one row and one column")

    @property
    def n_cells(self) -> int:
        return self.rows * self.cols

    def cell_ids(self) -> list[str]:
        if self.n_cells == 1 and self.label:
            return [self.label]
        return [f"r{r}c{c}" for r in range(self.rows) for c in range(self.cols)]


@dataclass(frozen=True)
class FeatureSchema:
    names: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise ValueError("feature names must be unique")

    def __len__(self) -> int:
        return len(self.names)

    @classmethod
    def build(cls, parameters: Sequence[str], cells: Sequence[str], stats: Sequence[str]) -> "FeatureSchema":
        return cls(tuple(f"{p}:{c}:{s}" for p in parameters for c in cells for s in stats))


@dataclass(frozen=True)
class FeatureRows:
    schema: FeatureSchema
    timestamps: np.ndarray  # datetime64[m]
    values: np.ndarray  # (timestamps, features)


@dataclass
class MergedDataset:
    """One row per bucket, features in [0, 1], binary labels.

    Resampling keeps provenance: ``source_index`` points original rows back
    to the dataset they came from (-1 for synthetic rows) and ``parents``
    holds the two source rows a synthetic row was interpolated between.
    """

    schema: FeatureSchema
    rows: np.ndarray
    labels: np.ndarray
    timestamps: np.ndarray
    synthetic: np.ndarray | None = None
    source_index: np.ndarray | None = None
    parents: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.rows)
        if not (len(self.labels) == n == len(self.timestamps)):
            raise ValueError("rows, labels and timestamps must have equal length")
        if self.rows.ndim != 2 or self.rows.shape[1] != len(self.schema):
            raise ValueError(f"row width {self.rows.shape} does not match schema of {len(self.schema)}")
        if self.synthetic is None:
            self.synthetic = np.zeros(n, dtype=bool)
        if self.source_index is None:
            self.source_index = np.arange(n, dtype=np.int64)
        if self.parents is None:
            self.parents = np.full((n, 2), -1, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.rows)

    def subset(self, idx: np.ndarray) -> "MergedDataset":
        """Rows ``idx``; provenance is re-rooted at this dataset's indices."""
        idx = np.asarray(idx, dtype=np.int64)
        return MergedDataset(self.schema, self.rows[idx], self.labels[idx], self.timestamps[idx],
                             synthetic=self.synthetic[idx], source_index=idx.copy())

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update("\n".join(self.schema.names).encode())
        h.update(np.ascontiguousarray(self.rows, dtype=np.float64).tobytes())
        h.update(np.ascontiguousarray(self.labels, dtype=np.uint8).tobytes())
        return h.hexdigest()


# ---------------------------------------------------------------------------
# normalization

def fit_normalization(grids: Iterable[ForecastGrid], parameters: Sequence[str] | None = None) -> NormalizationStats:
    """Global min and max per parameter over every non-missing point."""
    lo: dict[str, float] = {}
    hi: dict[str, float] = {}
    seen = False
    for grid in grids:
        seen = True
        for p in grid.manifest.parameters:
            if parameters is not None and p not in parameters:
                continue
            vals = grid.param(p)
            if np.isnan(vals).all():
                continue
            lo[p] = min(lo.get(p, np.inf), float(np.nanmin(vals)))
            hi[p] = max(hi.get(p, -np.inf), float(np.nanmax(vals)))
    if not seen:
        raise ValueError("fit_normalization needs at least one grid")
    for p in parameters or ():
        if p not in lo:
            raise AllMissing(p)
    return NormalizationStats({p: (lo[p], hi[p]) for p in lo})


def normalize_array(values: np.ndarray, parameters: Sequence[str], stats: NormalizationStats) -> np.ndarray:
    """Min-max scale ``values[parameter, ...]`` and clip to [0, 1]; NaN stays NaN."""
    out = np.empty(values.shape, dtype=np.float64)
    for i, p in enumerate(parameters):
        if p not in stats.ranges:
            raise UnknownParameter(p)
        lo, hi = stats.ranges[p]
        out[i] = np.clip((values[i] - lo) / (hi - lo), 0.0, 1.0)
    return out


def normalize(series: TimeSeriesField, stats: NormalizationStats) -> TimeSeriesField:
    vals = normalize_array(series.values, series.parameters, stats)
    return TimeSeriesField(series.parameters, series.timestamps, series.lats, series.lons, vals)


# ---------------------------------------------------------------------------
# aggregation

def partition_coarse_grid(spec: CoarseGridSpec, lats: np.ndarray, lons: np.ndarray) -> np.ndarray:
    """Cell index of every ``(lat, lon)`` grid point, or -1 outside the box.

    Cells are numbered row-major from the south-west corner. A point on an
    interior cell boundary belongs to the cell north/east of it.
    """
    b = spec.box
    dlat = (b.lat_max - b.lat_min) / spec.rows
    dlon = (b.lon_max - b.lon_min) / spec.cols
    lat_edges = b.lat_min + dlat * np.arange(1, spec.rows)
    lon_edges = b.lon_min + dlon * np.arange(1, spec.cols)
    rows = np.searchsorted(lat_edges, np.asarray(lats, dtype=float), side="right")
    cols = np.searchsorted(lon_edges, np.asarray(lons, dtype=float), side="right")
    cell = rows[:, None] * spec.cols + cols[None, :]
    la, lo = np.meshgrid(lats, lons, indexing="ij")
    cell[~b.contains(la, lo)] = -1
    return cell


def _stat(name: str, x: np.ndarray) -> np.ndarray:
    if name == "mean":
        return np.nanmean(x, axis=-1)
    if name == "std":
        return np.nanstd(x, axis=-1)
    if name == "min":
        return np.nanmin(x, axis=-1)
    if name == "max":
        return np.nanmax(x, axis=-1)
    q = {"q1": 25.0, "median": 50.0, "q3": 75.0}.get(name)
    if q is None:
        raise ValueError(f"unknown statistic {name!r}")
    return np.nanpercentile(x, q, axis=-1)


def aggregate_values(values: np.ndarray, cells: np.ndarray, n_cells: int, stats: Sequence[str]) -> np.ndarray:
    """Feature matrix ``(t, parameter * cell * stat)`` from ``values[p, t, level, lat, lon]``."""
    n_par, n_t = values.shape[:2]
    out = np.empty((n_t, n_par, n_cells, len(stats)), dtype=np.float64)
    for c in range(n_cells):
        mask = cells == c
        pts = values[:, :, :, mask].reshape(n_par, n_t, -1)
        counts = np.count_nonzero(~np.isnan(pts), axis=-1)
        if pts.shape[-1] == 0 or (counts == 0).any():
            raise EmptyCell(f"cell {c} has no non-missing points")
        for s, name in enumerate(stats):
            out[:, :, c, s] = _stat(name, pts).T
    return out.reshape(n_t, -1)


def aggregate_descriptive_stats(
    series: TimeSeriesField, spec: CoarseGridSpec, stats: Sequence[str] = ("mean",)
) -> FeatureRows:
    """Per timestamp, pool every level of each cell and summarize it.

    Feature order is parameter, then cell, then statistic. Standard
    deviation is the population one; quartiles interpolate linearly between
    order statistics.
    """
    for s in stats:
        if s not in STATISTICS:
            raise ValueError(f"unknown statistic {s!r}")
    cells = partition_coarse_grid(spec, series.lats, series.lons)
    feats = aggregate_values(series.values, cells, spec.n_cells, stats)
    schema = FeatureSchema.build(series.parameters, spec.cell_ids(), stats)
    return FeatureRows(schema, series.timestamps, feats)


# ---------------------------------------------------------------------------
# merge

def assemble_dataset(features: FeatureRows, labels: LabelTimeline, bucket_minutes: int | None = None) -> MergedDataset:
    """Average the feature vectors falling in each bucket and attach its label."""
    bucket = labels.bucket_minutes if bucket_minutes is None else bucket_minutes
    if bucket != labels.bucket_minutes:
        raise ValueError(f"label timeline uses {labels.bucket_minutes}-minute buckets, not {bucket}")
    t0 = to_datetime64(labels.start)
    n = len(labels.labels)
    offset = (features.timestamps - t0).astype("timedelta64[m]").astype(np.int64)
    idx = np.floor_divide(offset, bucket)
    outside = (offset < 0) | (idx >= n)
    if outside.any():
        first = features.timestamps[np.flatnonzero(outside)[0]]
        raise CoverageGap(f"feature timestamp {first} lies outside the label range")
    counts = np.bincount(idx, minlength=n)
    if (counts == 0).any():
        gap = labels.timestamps[np.flatnonzero(counts == 0)[0]]
        raise CoverageGap(f"bucket {gap} has no feature timestamp")
    sums = np.zeros((n, features.values.shape[1]), dtype=np.float64)
    np.add.at(sums, idx, features.values)
    rows = sums / counts[:, None]
    # bucket means of values in [0, 1] can only leave the interval by rounding
    np.clip(rows, 0.0, 1.0, out=rows)
    return MergedDataset(features.schema, rows, labels.labels.astype(np.uint8), labels.timestamps)
