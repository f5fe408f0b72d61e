"""Synthetic weather grids and advisories with a planted weather/reroute link.

Background fields are sums of slow travelling waves, so they are smooth in
space and time and consistent across forecast cycles. On event days CAPE and
PW are raised inside the target ARTCC polygon at every forecast knot of the
event window, and an advisory with that validity window is written out.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta, timezone
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from .advisory import LabelTimeline, PredictionTarget
from .errors import InvalidConfig
from .weather import (
    PARAMETERS,
    ForecastGrid,
    GridManifest,
    Polygon,
    points_in_polygon,
    save_regions,
    store_grid,
)

# rough quadrilaterals around a few centers; good enough to plant signals
DEFAULT_REGIONS: dict[str, tuple[tuple[float, float], ...]] = {
    "ZNY": ((-78.0, 38.5), (-70.5, 39.5), (-70.5, 43.5), (-77.5, 43.5)),
    "ZDC": ((-81.5, 34.5), (-74.5, 36.0), (-75.0, 40.0), (-80.5, 39.5)),
    "ZOB": ((-85.5, 39.5), (-78.5, 39.5), (-78.5, 43.5), (-85.5, 43.0)),
    "ZLC": ((-117.5, 39.0), (-108.5, 39.5), (-108.5, 48.5), (-117.0, 48.0)),
    "ZMA": ((-84.5, 24.0), (-79.5, 24.0), (-79.5, 28.5), (-84.5, 28.0)),
    "ZLA": ((-121.0, 32.0), (-114.0, 32.0), (-114.0, 37.5), (-121.0, 37.0)),
}

_LEVEL_SHAPE = {"PW": (1.0, 0.45, 0.1), "CAPE": (1.0, 0.8, 0.5), "CIN": (1.0, 0.7, 0.4)}
_APT_BASE = (295.0, 315.0, 335.0)
_BUCKET = 15


@dataclass(frozen=True)
class ScenarioTarget:
    artcc: str
    name: str


@dataclass(frozen=True)
class ScenarioConfig:
    days: int = 120
    start: date = date(2019, 6, 1)
    event_day_rate: float = 0.16
    correlation_strength: float = 0.9
    lat_min: float = 24.0
    lat_max: float = 50.0
    lon_min: float = -125.0
    lon_max: float = -67.0
    grid_step: float = 2.0
    levels_hpa: tuple[float, ...] = (850.0, 500.0, 250.0)
    forecast_step_hours: int = 1
    cycle_hours: int = 24
    min_event_hours: int = 1
    max_event_hours: int = 6
    targets: tuple[ScenarioTarget, ...] = (ScenarioTarget("ZNY", "J109 WEVEL MODIFIED"),)
    decoy_rate: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.days < 1:
            raise InvalidConfig("days must be positive")
        if not 0 < self.event_day_rate < 1:
            raise InvalidConfig("event_day_rate must lie in (0, 1)")
        if not 0 <= self.correlation_strength <= 1:
            raise InvalidConfig("correlation_strength must lie in [0, 1]")
        if not 1 <= self.min_event_hours <= self.max_event_hours <= 24:
            raise InvalidConfig("event hours must satisfy 1 <= min <= max <= 24")
        if self.cycle_hours % self.forecast_step_hours or 24 % self.cycle_hours:
            raise InvalidConfig("forecast step must divide the cycle, and the cycle must divide 24 h")
        if not self.targets:
            raise InvalidConfig("scenario needs at least one target")
        for t in self.targets:
            if t.artcc not in DEFAULT_REGIONS:
                raise InvalidConfig(f"no synthetic region for {t.artcc}")
        for lo, hi in ((self.lat_min, self.lat_max), (self.lon_min, self.lon_max)):
            n = (hi - lo) / self.grid_step if self.grid_step > 0 else -1
            if n < 1 or abs(n - round(n)) > 1e-6:
                raise InvalidConfig(f"grid_step {self.grid_step} does not tile [{lo}, {hi}]")
        if len(self.levels_hpa) != 3:
            raise InvalidConfig("synthetic grids use exactly three levels")

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        if "start" in d and not isinstance(d["start"], date):
            d["start"] = date.fromisoformat(str(d["start"]))
        if "targets" in d:
            d["targets"] = tuple(ScenarioTarget(t["artcc"], t["name"]) for t in d["targets"])
        if "levels_hpa" in d:
            d["levels_hpa"] = tuple(float(v) for v in d["levels_hpa"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise InvalidConfig(str(exc)) from exc


@dataclass(frozen=True)
class Event:
    day: int
    start: datetime
    end: datetime
    artcc: str
    name: str


@dataclass
class Scenario:
    root: Path
    grid_dirs: list[Path]
    advisory_paths: list[Path]
    events: list[Event]
    labels: dict[PredictionTarget, LabelTimeline]
    regions_path: Path
    config_path: Path
    start: datetime = field(default=None)
    end: datetime = field(default=None)


class _WaveField:
    """Sum of travelling sine waves over (hours, lat, lon)."""

    def __init__(self, rng: np.random.Generator, n: int = 3):
        self.k_lat = rng.uniform(0.05, 0.25, n)
        self.k_lon = rng.uniform(0.03, 0.15, n)
        self.omega = 2 * np.pi / (24.0 * rng.uniform(1.5, 6.0, n))
        self.phase = rng.uniform(0, 2 * np.pi, n)
        w = rng.uniform(0.5, 1.0, n)
        self.weight = w / w.sum()

    def __call__(self, hours: np.ndarray, lats: np.ndarray, lons: np.ndarray) -> np.ndarray:
        t = hours[:, None, None, None]
        la = lats[None, :, None, None]
        lo = lons[None, None, :, None]
        arg = self.k_lat * la + self.k_lon * lo + self.omega * t + self.phase
        return (self.weight * np.sin(arg)).sum(axis=-1)


def _advisory_text(number: int, day: date, event: Event, routes: Sequence[tuple[str, str, str]]) -> str:
    lines = [
        f"ATCSCC ADVZY {number:03d} DCC {day:%m/%d/%y} ROUTE RQD",
        f"NAME: {event.name}",
        f"CONSTRAINED AREA: {event.artcc}",
        "REASON: WEATHER",
        "INCLUDE TRAFFIC: KBWI/KDCA/KIAD DEPARTURES TO",
        "                KALB/KBOS/KSYR",
        f"FACILITIES INCLUDED: {event.artcc}",
        "FLIGHT STATUS: ALL_FLIGHTS",
        f"VALID: ETD {event.start:%d%H%M} TO {event.end:%d%H%M}",
        "PROBABILITY OF EXTENSION: LOW",
        "REMARKS: SYNTHETIC SCENARIO",
        "ASSOCIATED RESTRICTIONS: NONE",
        "",
        "MODIFICATIONS:",
        "ROUTES:",
        "",
        "ORIG      DEST      ROUTE",
        "----      ----      -----",
    ]
    for orig, dest, route in routes:
        lines.append(f"{orig}  {dest}      >{route}<")
    lines += ["", f"TMI ID: RR{event.artcc[1:]}{number:03d}",
              f"{event.start:%d%H%M}-{event.end:%d%H%M}",
              f"{day:%y/%m/%d} 00:00 SYNTHGEN"]
    return "\n".join(lines) + "\n"


def _labels(events: Sequence[Event], target: PredictionTarget, start: datetime, n_buckets: int,
            bucket: int) -> LabelTimeline:
    lab = np.zeros(n_buckets, dtype=np.uint8)
    step = timedelta(minutes=bucket)
    for ev in events:
        if (target.key == ev.artcc) or (target.key == " ".join(ev.name.upper().split())):
            lo = max((ev.start - start) // step, 0)
            hi = min(-((start - ev.end) // step), n_buckets)
            lab[lo:hi] = 1
    return LabelTimeline(target, bucket, start, lab)


def pipeline_config(config: ScenarioConfig, start: datetime, end: datetime, n_estimators: int = 200) -> dict:
    """Training configuration matching a generated scenario directory."""
    return {
        "mode": "per-advisory-name",
        "bucket_minutes": 15,
        "interpolation_step": 15,
        "coarse_grid": {"rows": 4, "cols": 4, "box": [24.0, 50.0, -125.0, -66.0]},
        "statistics": ["mean"],
        "parameters": list(PARAMETERS),
        "advisories": "advisories",
        "grids": "grids",
        "regions": "regions.geojson",
        "targets": [{"kind": "ARTCC", "key": t.artcc} for t in config.targets],
        "range": {"start": start.strftime("%Y-%m-%dT%H:%MZ"), "end": end.strftime("%Y-%m-%dT%H:%MZ")},
        "learners": [{"preset": "rf-paper", "n_estimators": n_estimators},
                     {"preset": "extra-paper", "n_estimators": n_estimators}],
        "resample": {"k_neighbors": 5, "target_ratio": 1.0, "tomek_removal": "both"},
        "cv": {"k": 5},
        "seed": config.seed,
        "output": "out",
    }


def generate_scenario(config: ScenarioConfig, out_dir: str | Path) -> Scenario:
    """Write grids, advisories, regions and a training config under ``out_dir``."""
    root = Path(out_dir)
    grid_root, adv_root = root / "grids", root / "advisories"
    grid_root.mkdir(parents=True, exist_ok=True)
    adv_root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(config.seed)

    manifest0 = GridManifest(
        reference_time=datetime(2000, 1, 1, tzinfo=timezone.utc),
        forecast_hours=(0, 1), levels_hpa=config.levels_hpa,
        lat_min=config.lat_min, lat_max=config.lat_max, lon_min=config.lon_min, lon_max=config.lon_max,
        lat_step=config.grid_step, lon_step=config.grid_step,
    )
    lats, lons = manifest0.lats, manifest0.lons
    la, lo = np.meshgrid(lats, lons, indexing="ij")
    regions = {code: Polygon(DEFAULT_REGIONS[code], key=code) for code in DEFAULT_REGIONS}
    masks = {t.artcc: points_in_polygon(lo, la, DEFAULT_REGIONS[t.artcc]) for t in config.targets}
    for code, mask in masks.items():
        if not mask.any():
            raise InvalidConfig(f"region {code} holds no grid point at {config.grid_step} degree spacing")

    waves = {p: _WaveField(rng) for p in PARAMETERS}

    # events, one draw sequence per day so the layout is seed-stable
    t0 = datetime(config.start.year, config.start.month, config.start.day, tzinfo=timezone.utc)
    events: list[Event] = []
    decoys: list[Event] = []
    for d in range(config.days):
        is_event = rng.random() < config.event_day_rate
        tgt = config.targets[int(rng.integers(len(config.targets)))]
        dur = int(rng.integers(config.min_event_hours, config.max_event_hours + 1))
        begin = int(rng.integers(0, 24 - dur + 1))
        is_decoy = rng.random() < config.decoy_rate
        decoy_begin = int(rng.integers(0, 21))
        day0 = t0 + timedelta(days=d)
        if is_event:
            # the plateau spans knots begin..begin+dur; validity also takes the
            # bucket that starts on the last elevated knot
            events.append(Event(d, day0 + timedelta(hours=begin),
                                day0 + timedelta(hours=begin + dur, minutes=_BUCKET), tgt.artcc, tgt.name))
        if is_decoy:
            decoys.append(Event(d, day0 + timedelta(hours=decoy_begin), day0 + timedelta(hours=decoy_begin + 3),
                                "ZLA", "LAS TO EAST VIA J146"))

    # absolute forecast-hour knots raised by each target's events
    raised: dict[str, set[int]] = {t.artcc: set() for t in config.targets}
    for ev in events:
        h0 = int((ev.start - t0).total_seconds() // 3600)
        h1 = int((ev.end - t0 - timedelta(minutes=_BUCKET)).total_seconds() // 3600)
        raised[ev.artcc].update(range(h0, h1 + 1))

    strength = config.correlation_strength
    grid_dirs = []
    n_cycles = config.days * 24 // config.cycle_hours
    hours_rel = np.arange(0, config.cycle_hours + 1, config.forecast_step_hours)
    for c in range(n_cycles):
        ref = t0 + timedelta(hours=c * config.cycle_hours)
        abs_hours = c * config.cycle_hours + hours_rel
        values = np.empty((len(PARAMETERS), len(hours_rel), 3, len(lats), len(lons)), dtype=np.float64)
        for p_idx, p in enumerate(PARAMETERS):
            base = waves[p](abs_hours.astype(float), lats, lons)  # (t, lat, lon)
            if p == "PW":
                surf = 25.0 + 10.0 * base
            elif p == "CAPE":
                diurnal = np.clip(np.sin(2 * np.pi * (abs_hours - 14) / 24.0), 0, None)[:, None, None]
                surf = 500.0 + 350.0 * base + 250.0 * diurnal
            elif p == "CIN":
                surf = -60.0 + 40.0 * base
            else:
                surf = 5.0 * base
            for lev in range(3):
                if p == "APT":
                    values[p_idx, :, lev] = _APT_BASE[lev] + surf
                else:
                    values[p_idx, :, lev] = _LEVEL_SHAPE[p][lev] * surf
        for code, hours in raised.items():
            hit = np.array([h in hours for h in abs_hours])
            if not hit.any() or strength == 0:
                continue
            mask = masks[code]
            for p, amp in (("CAPE", 5000.0), ("PW", 40.0)):
                p_idx = PARAMETERS.index(p)
                block = values[p_idx][hit]
                block[..., mask] += strength * amp
                values[p_idx][hit] = block
        values[PARAMETERS.index("PW")] = np.clip(values[PARAMETERS.index("PW")], 0, None)
        values[PARAMETERS.index("CAPE")] = np.clip(values[PARAMETERS.index("CAPE")], 0, None)
        values[PARAMETERS.index("CIN")] = np.clip(values[PARAMETERS.index("CIN")], None, 0)
        manifest = GridManifest(
            reference_time=ref, forecast_hours=tuple(int(h) for h in hours_rel),
            levels_hpa=config.levels_hpa, lat_min=config.lat_min, lat_max=config.lat_max,
            lon_min=config.lon_min, lon_max=config.lon_max,
            lat_step=config.grid_step, lon_step=config.grid_step,
        )
        grid = ForecastGrid(manifest, values.astype(np.float32))
        gdir = grid_root / f"{ref:%Y%m%d%H}"
        store_grid(grid, gdir)
        grid_dirs.append(gdir)

    adv_paths = []
    per_day: dict[int, int] = {}
    for ev in sorted(events + decoys, key=lambda e: (e.start, e.artcc)):
        per_day[ev.day] = per_day.get(ev.day, 0) + 1
        day = (t0 + timedelta(days=ev.day)).date()
        routes = [("BWI DCA IAD", "SYR", "JERES J211 LEONI J109 WEVEL ELZ"),
                  ("BWI IAD", "BOS", "JERES J211 LEONI J109 WEVEL ELZ ITH ALB GDM3")]
        text = _advisory_text(per_day[ev.day], day, ev, routes)
        path = adv_root / f"advzy_{day:%Y%m%d}_{per_day[ev.day]:03d}.txt"
        path.write_text(text, encoding="utf-8")
        adv_paths.append(path)

    end = t0 + timedelta(days=config.days)
    n_buckets = config.days * 24 * 4
    everything = events + decoys
    labels = {}
    for t in config.targets:
        for target in (PredictionTarget.artcc(t.artcc), PredictionTarget.advisory_name(t.name)):
            labels[target] = _labels(everything, target, t0, n_buckets, _BUCKET)

    regions_path = root / "regions.geojson"
    save_regions(regions, regions_path)
    config_path = root / "config.yaml"
    config_path.write_text(yaml.safe_dump(pipeline_config(config, t0, end), sort_keys=True))
    (root / "events.json").write_text(json.dumps(
        [{"start": e.start.strftime("%Y-%m-%dT%H:%MZ"), "end": e.end.strftime("%Y-%m-%dT%H:%MZ"),
          "artcc": e.artcc, "name": e.name} for e in events], indent=1))
    return Scenario(root, grid_dirs, adv_paths, events, labels, regions_path, config_path, t0, end)
