from datetime import timedelta

import numpy as np
import pytest
from scipy.stats import binom

from reroute.advisory import PredictionTarget, build_label_timeline, ingest_directory, parse_advisory
from reroute.errors import InvalidConfig
from reroute.synthgen import DEFAULT_REGIONS, ScenarioConfig, ScenarioTarget, generate_scenario
from reroute.weather import load_grid, points_in_polygon

SMALL = dict(days=20)


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_event_count_within_binomial_interval(tmp_path, seed):
    cfg = ScenarioConfig(days=100, seed=seed)
    scenario = generate_scenario(cfg, tmp_path)
    lo, hi = binom.interval(0.99, 100, 0.16)
    assert lo <= len(scenario.events) <= hi
    assert len({e.day for e in scenario.events}) == len(scenario.events)


def test_same_seed_byte_identical(tmp_path):
    cfg = ScenarioConfig(seed=5, **SMALL)
    generate_scenario(cfg, tmp_path / "a")
    generate_scenario(cfg, tmp_path / "b")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert any(f.suffix == ".raster" for f in files) and any(f.suffix == ".txt" for f in files)
    assert files == sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_different_seed_differs(tmp_path):
    a = generate_scenario(ScenarioConfig(seed=1, **SMALL), tmp_path / "a")
    b = generate_scenario(ScenarioConfig(seed=2, **SMALL), tmp_path / "b")
    assert [e.start for e in a.events] != [e.start for e in b.events]


def regional_cape(scenario, code):
    """Mean surface CAPE inside ``code`` per forecast knot, with the knot times."""
    times, means = [], []
    for gdir in scenario.grid_dirs:
        grid = load_grid(gdir)
        m = grid.manifest
        la, lo = np.meshgrid(m.lats, m.lons, indexing="ij")
        mask = points_in_polygon(lo, la, DEFAULT_REGIONS[code])
        cape = grid.param("CAPE")[:, 0][:, mask].mean(axis=1)
        for t, v in zip(m.valid_times, cape):
            times.append(t)
            means.append(float(v))
    return np.array(times), np.array(means)


@pytest.mark.parametrize("seed", [0, 7, 21])
def test_planted_cape_signal(tmp_path, seed):
    cfg = ScenarioConfig(seed=seed, correlation_strength=1.0, event_day_rate=0.4, **SMALL)
    scenario = generate_scenario(cfg, tmp_path)
    assert scenario.events
    times, cape = regional_cape(scenario, "ZNY")
    inside = np.zeros(len(times), dtype=bool)
    for ev in scenario.events:
        lo = np.datetime64(ev.start.replace(tzinfo=None), "m")
        hi = np.datetime64((ev.end - timedelta(minutes=15)).replace(tzinfo=None), "m")
        inside |= (times >= lo) & (times <= hi)
    assert cape[inside].mean() > cape[~inside].mean()


def test_zero_strength_plants_nothing(tmp_path):
    base = dict(seed=3, event_day_rate=0.4, **SMALL)
    flat = generate_scenario(ScenarioConfig(correlation_strength=0.0, **base), tmp_path / "flat")
    _, cape = regional_cape(flat, "ZNY")
    assert cape.max() < 2000.0


def test_truth_equals_parsed_labels(tmp_path):
    cfg = ScenarioConfig(seed=4, event_day_rate=0.4, decoy_rate=0.3,
                         targets=(ScenarioTarget("ZNY", "J109 WEVEL MODIFIED"), ScenarioTarget("ZOB", "CAN EAST 2")),
                         **SMALL)
    scenario = generate_scenario(cfg, tmp_path)
    parsed = ingest_directory(tmp_path / "advisories")
    assert len(parsed) == len(scenario.advisory_paths)
    for target, truth in scenario.labels.items():
        rebuilt = build_label_timeline(parsed, target, 15, scenario.start, scenario.end)
        assert np.array_equal(rebuilt.labels, truth.labels), target
    assert PredictionTarget.artcc("ZOB") in scenario.labels
    assert sum(int(t.labels.sum()) for t in scenario.labels.values()) > 0


def test_every_advisory_parses(tmp_path):
    scenario = generate_scenario(ScenarioConfig(seed=6, event_day_rate=0.5, **SMALL), tmp_path)
    for path in scenario.advisory_paths:
        rec = parse_advisory(path.read_text())
        assert rec.valid_start.minute % 15 == 0 and rec.valid_end.minute % 15 == 0
        assert rec.routes


def test_event_windows_bounded(tmp_path):
    scenario = generate_scenario(ScenarioConfig(seed=8, event_day_rate=0.6, **SMALL), tmp_path)
    for ev in scenario.events:
        hours = (ev.end - ev.start - timedelta(minutes=15)).total_seconds() / 3600
        assert 1 <= hours <= 6


@pytest.mark.parametrize("bad", [
    dict(days=0), dict(event_day_rate=0.0), dict(event_day_rate=1.0), dict(correlation_strength=1.5),
    dict(min_event_hours=4, max_event_hours=2), dict(targets=()), dict(targets=(ScenarioTarget("ZZZ", "X"),)),
    dict(levels_hpa=(850.0,)), dict(cycle_hours=5), dict(grid_step=4.0), dict(grid_step=0.0),
])
def test_invalid_config(bad):
    with pytest.raises(InvalidConfig):
        ScenarioConfig(**bad)


def test_from_dict():
    cfg = ScenarioConfig.from_dict({"days": 5, "start": "2020-01-01", "targets": [{"artcc": "ZDC", "name": "A"}]})
    assert cfg.days == 5 and cfg.targets[0].artcc == "ZDC"
    with pytest.raises(InvalidConfig):
        ScenarioConfig.from_dict({"dayz": 5})
