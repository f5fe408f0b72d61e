"""Forecast grid storage, regional masking and temporal interpolation.

A grid directory holds a JSON ``manifest`` and one raster per
``(parameter, forecast hour)`` named ``<PARAM>_f<HHH>.raster``. Each raster is
the level-major float32 little-endian block ``(level, lat south->north,
lon west->east)``; NaN marks missing points. GRIB decoding is not done here:
grids are expected to have been converted to this layout offline.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .advisory import from_datetime64, parse_utc, to_datetime64, _iso
from .errors import (
    CorruptManifest,
    EmptyIntersection,
    ManifestMismatch,
    MissingRaster,
    SingleSnapshot,
)

PARAMETERS = ("PW", "CAPE", "APT", "CIN")
UNITS = {"PW": "kg/m^2", "CAPE": "J/kg", "APT": "K", "CIN": "J/kg"}
MANIFEST_VERSION = 1
RASTER_DTYPE = np.dtype("<f4")


def _axis_length(lo: float, hi: float, step: float) -> int:
    n = (hi - lo) / step
    if abs(n - round(n)) > 1e-6:
        raise CorruptManifest(f"axis [{lo}, {hi}] is not a whole number of {step} steps")
    return int(round(n)) + 1


@dataclass(frozen=True)
class GridManifest:
    reference_time: datetime
    forecast_hours: tuple[int, ...]
    levels_hpa: tuple[float, ...]
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float
    lat_step: float
    lon_step: float
    parameters: tuple[str, ...] = PARAMETERS

    def __post_init__(self):
        if self.lat_step <= 0 or self.lon_step <= 0:
            raise CorruptManifest("grid steps must be positive")
        if not (self.lat_min < self.lat_max and self.lon_min < self.lon_max):
            # single-row/column grids are produced by slicing
            if not (self.lat_min <= self.lat_max and self.lon_min <= self.lon_max):
                raise CorruptManifest("grid bounds are inverted")
        hours = self.forecast_hours
        if any(b <= a for a, b in zip(hours, hours[1:])):
            raise CorruptManifest("forecast_hours must be strictly increasing")
        unknown = set(self.parameters) - set(PARAMETERS)
        if unknown:
            raise CorruptManifest(f"unknown parameters {sorted(unknown)}")
        _axis_length(self.lat_min, self.lat_max, self.lat_step)
        _axis_length(self.lon_min, self.lon_max, self.lon_step)

    @property
    def n_lat(self) -> int:
        return _axis_length(self.lat_min, self.lat_max, self.lat_step)

    @property
    def n_lon(self) -> int:
        return _axis_length(self.lon_min, self.lon_max, self.lon_step)

    @property
    def lats(self) -> np.ndarray:
        return self.lat_min + self.lat_step * np.arange(self.n_lat)

    @property
    def lons(self) -> np.ndarray:
        return self.lon_min + self.lon_step * np.arange(self.n_lon)

    @property
    def shape(self) -> tuple[int, int, int, int, int]:
        return (len(self.parameters), len(self.forecast_hours), len(self.levels_hpa),
                self.n_lat, self.n_lon)

    @property
    def valid_times(self) -> np.ndarray:
        t0 = to_datetime64(self.reference_time)
        return t0 + np.asarray(self.forecast_hours, dtype=np.int64) * np.timedelta64(60, "m")

    def to_dict(self) -> dict:
        return {
            "version": MANIFEST_VERSION,
            "reference_time": _iso(self.reference_time),
            "forecast_hours": list(self.forecast_hours),
            "levels_hpa": list(self.levels_hpa),
            "lat_min": self.lat_min, "lat_max": self.lat_max,
            "lon_min": self.lon_min, "lon_max": self.lon_max,
            "lat_step": self.lat_step, "lon_step": self.lon_step,
            "parameters": list(self.parameters),
            "units": {p: UNITS[p] for p in self.parameters},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GridManifest":
        if d.get("version") != MANIFEST_VERSION:
            raise CorruptManifest(f"unsupported manifest version {d.get('version')!r}")
        try:
            return cls(
                reference_time=parse_utc(d["reference_time"]),
                forecast_hours=tuple(int(h) for h in d["forecast_hours"]),
                levels_hpa=tuple(float(v) for v in d["levels_hpa"]),
                lat_min=float(d["lat_min"]), lat_max=float(d["lat_max"]),
                lon_min=float(d["lon_min"]), lon_max=float(d["lon_max"]),
                lat_step=float(d["lat_step"]), lon_step=float(d["lon_step"]),
                parameters=tuple(d["parameters"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise CorruptManifest(f"bad manifest field: {exc}") from exc


@dataclass(frozen=True)
class ForecastGrid:
    """Values indexed ``[parameter, forecast_hour, level, lat, lon]``."""

    manifest: GridManifest
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.values.shape != self.manifest.shape:
            raise ManifestMismatch(f"values shape {self.values.shape} != {self.manifest.shape}")
        for name in ("PW", "CAPE"):
            if name in self.manifest.parameters and np.nanmin(self.param(name), initial=0.0) < 0:
                raise ValueError(f"{name} must be non-negative")
        self.values.setflags(write=False)

    def param(self, name: str) -> np.ndarray:
        return self.values[self.manifest.parameters.index(name)]


@dataclass(frozen=True)
class TimeSeriesField:
    """Values indexed ``[parameter, timestamp, level, lat, lon]``."""

    parameters: tuple[str, ...]
    timestamps: np.ndarray  # datetime64[m]
    lats: np.ndarray
    lons: np.ndarray
    values: np.ndarray = field(repr=False)


# ---------------------------------------------------------------------------
# storage

def raster_name(param: str, hour: int) -> str:
    return f"{param}_f{hour:03d}.raster"


def store_grid(grid: ForecastGrid, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    m = grid.manifest
    for p_idx, param in enumerate(m.parameters):
        for h_idx, hour in enumerate(m.forecast_hours):
            block = np.ascontiguousarray(grid.values[p_idx, h_idx], dtype=RASTER_DTYPE)
            (directory / raster_name(param, hour)).write_bytes(block.tobytes())
    (directory / "manifest").write_text(json.dumps(m.to_dict(), indent=2, sort_keys=True) + "\n")


def read_manifest(directory: str | Path) -> GridManifest:
    path = Path(directory) / "manifest"
    if not path.is_file():
        raise MissingRaster(f"no manifest in {directory}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CorruptManifest(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise CorruptManifest(f"{path}: not a mapping")
    return GridManifest.from_dict(data)


def load_grid(directory: str | Path) -> ForecastGrid:
    directory = Path(directory)
    if not directory.is_dir():
        raise MissingRaster(f"grid directory {directory} does not exist")
    m = read_manifest(directory)
    block_shape = m.shape[2:]
    expected = int(np.prod(block_shape)) * RASTER_DTYPE.itemsize
    values = np.empty(m.shape, dtype=np.float32)
    for p_idx, param in enumerate(m.parameters):
        for h_idx, hour in enumerate(m.forecast_hours):
            path = directory / raster_name(param, hour)
            if not path.is_file():
                raise MissingRaster(str(path))
            raw = path.read_bytes()
            if len(raw) != expected:
                raise ManifestMismatch(f"{path.name}: {len(raw)} bytes, expected {expected}")
            values[p_idx, h_idx] = np.frombuffer(raw, dtype=RASTER_DTYPE).reshape(block_shape)
    return ForecastGrid(m, values)


class GridStore:
    """A directory of grid directories, one per forecast cycle."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        if not self.root.is_dir():
            raise MissingRaster(f"grid store {self.root} does not exist")
        self.entries: list[tuple[Path, GridManifest]] = []
        for sub in sorted(p for p in self.root.iterdir() if p.is_dir()):
            if (sub / "manifest").is_file():
                self.entries.append((sub, read_manifest(sub)))
        if not self.entries:
            raise MissingRaster(f"grid store {self.root} holds no grid directories")
        self.entries.sort(key=lambda e: (e[1].reference_time, e[0].name))

    def covering(self, start: np.datetime64, end: np.datetime64) -> list[Path]:
        """Grid directories whose valid-time span intersects ``[start, end]``."""
        out = []
        for path, m in self.entries:
            vt = m.valid_times
            if vt[-1] >= start and vt[0] <= end:
                out.append(path)
        return out


# ---------------------------------------------------------------------------
# regions

@dataclass(frozen=True)
class BoundingBox:
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        return self.lat_min, self.lat_max, self.lon_min, self.lon_max

    def contains(self, lat: np.ndarray, lon: np.ndarray) -> np.ndarray:
        return ((lat >= self.lat_min) & (lat <= self.lat_max)
                & (lon >= self.lon_min) & (lon <= self.lon_max))


@dataclass(frozen=True)
class Polygon:
    """Closed ring of ``(lon, lat)`` vertices; closing vertex optional."""

    vertices: tuple[tuple[float, float], ...]
    key: str = ""

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        lons = [v[0] for v in self.vertices]
        lats = [v[1] for v in self.vertices]
        return min(lats), max(lats), min(lons), max(lons)

    def contains(self, lat: np.ndarray, lon: np.ndarray) -> np.ndarray:
        return points_in_polygon(lon, lat, self.vertices)


RegionSpec = BoundingBox | Polygon


def points_in_polygon(x: np.ndarray, y: np.ndarray, vertices: Sequence[tuple[float, float]],
                      eps: float = 1e-9) -> np.ndarray:
    """Even-odd ray casting; points on an edge count as inside."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    verts = [tuple(map(float, v)) for v in vertices]
    if verts[0] == verts[-1]:
        verts = verts[:-1]
    inside = np.zeros(np.broadcast(x, y).shape, dtype=bool)
    on_edge = np.zeros_like(inside)
    n = len(verts)
    for i in range(n):
        x1, y1 = verts[i]
        x2, y2 = verts[(i + 1) % n]
        cross = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1)
        scale = max(abs(x2 - x1), abs(y2 - y1), 1.0)
        on_edge |= ((np.abs(cross) <= eps * scale)
                    & (x >= min(x1, x2) - eps) & (x <= max(x1, x2) + eps)
                    & (y >= min(y1, y2) - eps) & (y <= max(y1, y2) + eps))
        if y1 == y2:
            continue
        straddles = (y1 > y) != (y2 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_cross = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
        inside ^= straddles & (x < x_cross)
    return inside | on_edge


def load_regions(path: str | Path) -> dict[str, Polygon]:
    """Read a GeoJSON FeatureCollection of ARTCC polygons.

    Each feature needs a ``Polygon`` geometry (outer ring only is used) and an
    ``artcc`` property with the three-letter code.
    """
    data = json.loads(Path(path).read_text())
    regions = {}
    for feat in data.get("features", []):
        code = feat["properties"]["artcc"].upper()
        geom = feat["geometry"]
        if geom["type"] != "Polygon":
            raise ValueError(f"{code}: only Polygon geometries are supported")
        ring = tuple((float(lon), float(lat)) for lon, lat in geom["coordinates"][0])
        regions[code] = Polygon(ring, key=code)
    return regions


def save_regions(regions: dict[str, Polygon], path: str | Path) -> None:
    features = []
    for code in sorted(regions):
        ring = [list(v) for v in regions[code].vertices]
        if ring[0] != ring[-1]:
            ring.append(ring[0])
        features.append({
            "type": "Feature",
            "properties": {"artcc": code},
            "geometry": {"type": "Polygon", "coordinates": [ring]},
        })
    Path(path).write_text(json.dumps({"type": "FeatureCollection", "features": features}, indent=1))


def slice_region(grid: ForecastGrid, mask: RegionSpec) -> ForecastGrid:
    """Restrict ``grid`` to the bounding box of ``mask``.

    For polygon masks the points outside the polygon become NaN.
    """
    m = grid.manifest
    lat_lo, lat_hi, lon_lo, lon_hi = mask.bounds
    lats, lons = m.lats, m.lons
    eps = 1e-9
    lat_idx = np.flatnonzero((lats >= lat_lo - eps) & (lats <= lat_hi + eps))
    lon_idx = np.flatnonzero((lons >= lon_lo - eps) & (lons <= lon_hi + eps))
    if lat_idx.size == 0 or lon_idx.size == 0:
        raise EmptyIntersection(f"mask {mask.bounds} misses the grid")
    i0, i1 = lat_idx[0], lat_idx[-1] + 1
    j0, j1 = lon_idx[0], lon_idx[-1] + 1
    values = np.array(grid.values[:, :, :, i0:i1, j0:j1])
    sub_lats, sub_lons = lats[i0:i1], lons[j0:j1]
    if isinstance(mask, Polygon):
        la, lo = np.meshgrid(sub_lats, sub_lons, indexing="ij")
        keep = mask.contains(la, lo)
        if not keep.any():
            raise EmptyIntersection(f"no grid point inside polygon {mask.key or mask.bounds}")
        values[..., ~keep] = np.nan
    manifest = replace(
        m,
        lat_min=float(sub_lats[0]), lat_max=float(sub_lats[-1]),
        lon_min=float(sub_lons[0]), lon_max=float(sub_lons[-1]),
    )
    return ForecastGrid(manifest, values)


# ---------------------------------------------------------------------------
# time interpolation

def _segment_weights(span_minutes: int, step_minutes: int) -> np.ndarray:
    return np.arange(0, span_minutes, step_minutes, dtype=np.float64) / span_minutes


def iter_interpolated(grid: ForecastGrid, step_minutes: int) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield ``(timestamps, values)`` one forecast segment at a time.

    Each chunk covers ``[knot_i, knot_{i+1})``; the final chunk also carries
    the last knot. ``values`` is float64 ``[parameter, t, level, lat, lon]``.
    """
    m = grid.manifest
    hours = np.asarray(m.forecast_hours, dtype=np.int64)
    if len(hours) < 2:
        raise SingleSnapshot(f"grid at {_iso(m.reference_time)} has {len(hours)} forecast hour(s)")
    if step_minutes <= 0:
        raise ValueError("step_minutes must be positive")
    span = int(hours[-1] - hours[0]) * 60
    if span % step_minutes:
        raise ValueError(f"{step_minutes}-minute step does not divide the {span}-minute span")
    knot_times = m.valid_times
    offset = 0  # minutes since first knot of the next output sample
    src = grid.values
    for k in range(len(hours) - 1):
        seg = int(hours[k + 1] - hours[k]) * 60
        rel = np.arange(offset, seg, step_minutes, dtype=np.int64)
        w = (rel / seg)[None, :, None, None, None]
        a = src[:, k:k + 1].astype(np.float64)
        b = src[:, k + 1:k + 2].astype(np.float64)
        vals = (1.0 - w) * a + w * b
        # keep every sample inside its knot interval despite rounding
        vals = np.clip(vals, np.minimum(a, b), np.maximum(a, b))
        if rel.size and rel[0] == 0:
            vals[:, 0] = a[:, 0]
        ts = knot_times[k] + rel * np.timedelta64(1, "m")
        last = k == len(hours) - 2
        if last:
            ts = np.append(ts, knot_times[-1])
            vals = np.concatenate([vals, src[:, -1:].astype(np.float64)], axis=1)
        yield ts, vals
        offset = int(rel[-1] + step_minutes - seg) if rel.size else offset - seg


def interpolate_time(grid: ForecastGrid, step_minutes: int) -> TimeSeriesField:
    """Piecewise-linear resampling of ``grid`` every ``step_minutes``.

    Output runs from the first to the last forecast hour inclusive. A missing
    value at either end of a segment makes the segment interior missing.
    """
    chunks = list(iter_interpolated(grid, step_minutes))
    ts = np.concatenate([c[0] for c in chunks])
    vals = np.concatenate([c[1] for c in chunks], axis=1)
    m = grid.manifest
    return TimeSeriesField(m.parameters, ts, m.lats, m.lons, vals)
