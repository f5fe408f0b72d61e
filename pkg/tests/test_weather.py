from datetime import datetime, timezone

import numpy as np
import pytest
import shapely
from hypothesis import given, settings
from hypothesis import strategies as st

from reroute.errors import (
    CorruptManifest,
    EmptyIntersection,
    ManifestMismatch,
    MissingRaster,
    SingleSnapshot,
)
from reroute.weather import (
    BoundingBox,
    ForecastGrid,
    GridManifest,
    GridStore,
    Polygon,
    interpolate_time,
    iter_interpolated,
    load_grid,
    load_regions,
    points_in_polygon,
    raster_name,
    save_regions,
    slice_region,
    store_grid,
)

REF = datetime(2020, 6, 1, tzinfo=timezone.utc)


def make_grid(hours=(0, 3), levels=(850.0, 500.0), n=10, params=("PW", "CAPE", "APT", "CIN"), seed=0, values=None):
    m = GridManifest(REF, tuple(hours), tuple(levels), 30.0, 30.0 + n - 1, -90.0, -90.0 + n - 1, 1.0, 1.0,
                     parameters=tuple(params))
    if values is None:
        values = np.random.default_rng(seed).uniform(0, 100, m.shape).astype(np.float32)
    return ForecastGrid(m, values)


# --- storage ---------------------------------------------------------------

def test_round_trip_bit_identical(tmp_path):
    grid = make_grid(seed=3)
    store_grid(grid, tmp_path / "g")
    back = load_grid(tmp_path / "g")
    assert back.manifest == grid.manifest
    assert back.values.tobytes() == grid.values.tobytes()


def test_raster_size_and_layout(tmp_path):
    levels = tuple(float(v) for v in range(1000, 150, -50))[:17]
    grid = make_grid(hours=(0, 3), levels=levels, params=("PW", "CAPE"))
    store_grid(grid, tmp_path)
    files = sorted(p.name for p in tmp_path.glob("*.raster"))
    assert files == ["CAPE_f000.raster", "CAPE_f003.raster", "PW_f000.raster", "PW_f003.raster"]
    for f in files:
        assert (tmp_path / f).stat().st_size == 17 * 10 * 10 * 4
    # level-major, then south->north, then west->east, little-endian float32
    raw = np.frombuffer((tmp_path / raster_name("PW", 3)).read_bytes(), dtype="<f4")
    assert raw[1 * 100 + 2 * 10 + 7] == grid.values[0, 1, 1, 2, 7]


def test_truncated_raster(tmp_path):
    store_grid(make_grid(), tmp_path)
    path = tmp_path / raster_name("CAPE", 3)
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(ManifestMismatch):
        load_grid(tmp_path)


def test_missing_raster_and_manifest(tmp_path):
    store_grid(make_grid(), tmp_path)
    (tmp_path / raster_name("APT", 0)).unlink()
    with pytest.raises(MissingRaster):
        load_grid(tmp_path)
    (tmp_path / "manifest").unlink()
    with pytest.raises(MissingRaster):
        load_grid(tmp_path)
    with pytest.raises(MissingRaster):
        load_grid(tmp_path / "nowhere")


@pytest.mark.parametrize("text", ["{not json", "[1, 2]", '{"version": 99}', '{"version": 1, "lat_min": 0}'])
def test_corrupt_manifest(tmp_path, text):
    store_grid(make_grid(), tmp_path)
    (tmp_path / "manifest").write_text(text)
    with pytest.raises(CorruptManifest):
        load_grid(tmp_path)


def test_store_load_store_byte_identical(tmp_path):
    grid = make_grid(seed=5)
    store_grid(grid, tmp_path / "a")
    store_grid(load_grid(tmp_path / "a"), tmp_path / "b")
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_negative_pw_rejected():
    vals = np.ones(make_grid().manifest.shape, dtype=np.float32)
    vals[0, 0, 0, 0, 0] = -1
    with pytest.raises(ValueError):
        make_grid(values=vals)


def test_grid_store_covering(tmp_path):
    store_grid(make_grid(hours=(0, 3)), tmp_path / "2020060100")
    store = GridStore(tmp_path)
    assert len(store.entries) == 1
    assert store.covering(np.datetime64("2020-06-01T01:00"), np.datetime64("2020-06-01T02:00"))
    assert not store.covering(np.datetime64("2020-06-02T00:00"), np.datetime64("2020-06-02T01:00"))
    with pytest.raises(MissingRaster):
        GridStore(tmp_path / "absent")


# --- regions ---------------------------------------------------------------

def test_full_box_identity():
    grid = make_grid()
    out = slice_region(grid, BoundingBox(30, 39, -90, -81))
    assert out.manifest == grid.manifest
    assert np.array_equal(out.values, grid.values)


def test_corner_box_count():
    out = slice_region(make_grid(), BoundingBox(30, 32, -90, -87))
    assert out.values.shape[3:] == (3, 4)
    assert np.isfinite(out.values[0, 0, 0]).sum() == 12


def test_triangle_single_point():
    tri = Polygon(((-85.5, 34.5), (-84.5, 34.5), (-85.0, 35.4)), key="T")
    out = slice_region(make_grid(), tri)
    for p in range(4):
        for h in range(2):
            for lev in range(2):
                assert np.isfinite(out.values[p, h, lev]).sum() == 1
    finite = np.argwhere(np.isfinite(out.values[0, 0, 0]))[0]
    assert out.manifest.lats[finite[0]] == 35.0 and out.manifest.lons[finite[1]] == -85.0


def test_empty_intersection():
    with pytest.raises(EmptyIntersection):
        slice_region(make_grid(), BoundingBox(0, 5, 0, 5))
    with pytest.raises(EmptyIntersection):
        slice_region(make_grid(), Polygon(((-85.6, 34.2), (-85.2, 34.2), (-85.4, 34.8))))


def test_regions_file_round_trip(tmp_path):
    regions = {"ZNY": Polygon(((-78.0, 38.5), (-70.5, 39.5), (-70.5, 43.5), (-77.5, 43.5)), key="ZNY")}
    save_regions(regions, tmp_path / "r.geojson")
    back = load_regions(tmp_path / "r.geojson")
    assert back["ZNY"].contains(np.array(40.0), np.array(-74.0))
    assert not back["ZNY"].contains(np.array(45.0), np.array(-74.0))


coord = st.integers(-20, 20).map(lambda v: v / 2)


@settings(max_examples=150, deadline=None)
@given(st.lists(st.tuples(coord, coord), min_size=3, max_size=7, unique=True),
       st.lists(st.tuples(coord, coord), min_size=1, max_size=30))
def test_points_in_polygon_matches_shapely(ring, points):
    poly = shapely.Polygon(ring)
    if not poly.is_valid or poly.area == 0:
        return
    xs = np.array([p[0] for p in points])
    ys = np.array([p[1] for p in points])
    got = points_in_polygon(xs, ys, ring)
    expect = [poly.covers(shapely.Point(x, y)) for x, y in points]
    assert got.tolist() == expect


@settings(max_examples=50, deadline=None)
@given(st.floats(29, 38), st.floats(0.5, 6), st.floats(-91, -83), st.floats(0.5, 6))
def test_slice_is_idempotent(lat0, dlat, lon0, dlon):
    grid = make_grid()
    for mask in (BoundingBox(lat0, lat0 + dlat, lon0, lon0 + dlon),
                 Polygon(((lon0, lat0), (lon0 + dlon, lat0), (lon0 + dlon / 2, lat0 + dlat)))):
        try:
            once = slice_region(grid, mask)
        except EmptyIntersection:
            continue
        twice = slice_region(once, mask)
        assert twice.manifest == once.manifest
        assert np.array_equal(twice.values, once.values, equal_nan=True)


# --- interpolation ---------------------------------------------------------

def single_point(values_by_hour, hours):
    vals = np.array(values_by_hour, dtype=np.float32).reshape(1, len(hours), 1, 1, 1)
    m = GridManifest(REF, tuple(hours), (500.0,), 30.0, 30.0, -90.0, -90.0, 1.0, 1.0, parameters=("APT",))
    return ForecastGrid(m, vals)


def test_linear_midpoint():
    ts = interpolate_time(single_point([0.2, 0.8], (0, 3)), 90)
    assert len(ts.timestamps) == 3
    # knots are stored as float32, so the exact midpoint is of the stored values
    a, b = np.float64(np.float32(0.2)), np.float64(np.float32(0.8))
    assert abs(ts.values[0, 1, 0, 0, 0] - (a + b) / 2) <= 1e-12
    assert abs(ts.values[0, 1, 0, 0, 0] - 0.5) <= 1e-7
    dyadic = interpolate_time(single_point([0.25, 0.75], (0, 3)), 90)
    assert dyadic.values[0, 1, 0, 0, 0] == 0.5


def test_knot_exactness_and_count():
    grid = make_grid(hours=(0, 3, 6, 9, 12), seed=7)
    ts = interpolate_time(grid, 15)
    assert len(ts.timestamps) == 4 * 12 + 1
    assert np.all(np.diff(ts.timestamps) == np.timedelta64(15, "m"))
    for k in range(5):
        assert np.array_equal(ts.values[:, 12 * k], grid.values[:, k].astype(np.float64))


@pytest.mark.parametrize("hours,step", [((0, 3), 15), ((0, 3, 6, 9, 12), 1), ((0, 1, 3, 6), 15), ((0, 6), 90)])
def test_count_formula(hours, step):
    ts = interpolate_time(make_grid(hours=hours, n=2), step)
    assert len(ts.timestamps) == (hours[-1] - hours[0]) * 60 // step + 1
    assert ts.timestamps[0] == np.datetime64("2020-06-01T00:00") + np.timedelta64(hours[0] * 60, "m")


def test_missing_propagates_over_segment():
    ts = interpolate_time(single_point([1.0, np.nan, 3.0, 4.0], (0, 3, 6, 9)), 15)
    v = ts.values[0, :, 0, 0, 0]
    assert v[0] == 1.0 and np.isnan(v[1:24]).all()
    assert v[24] == 3.0 and v[36] == 4.0 and np.isfinite(v[24:]).all()


def test_single_snapshot_and_bad_step():
    with pytest.raises(SingleSnapshot):
        interpolate_time(make_grid(hours=(0,), n=2), 15)
    with pytest.raises(ValueError):
        interpolate_time(make_grid(hours=(0, 3), n=2), 7)


def test_chunks_concatenate_to_whole():
    grid = make_grid(hours=(0, 3, 6), n=3, seed=2)
    whole = interpolate_time(grid, 15)
    parts = list(iter_interpolated(grid, 15))
    assert np.array_equal(np.concatenate([p[0] for p in parts]), whole.timestamps)
    assert np.array_equal(np.concatenate([p[1] for p in parts], axis=1), whole.values)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1e4, 1e4, allow_nan=False, width=32), min_size=2, max_size=6),
       st.sampled_from([1, 15, 30, 60]))
def test_interpolation_within_knot_bounds(knots, step):
    hours = tuple(3 * i for i in range(len(knots)))
    ts = interpolate_time(single_point(knots, hours), step)
    v = ts.values[0, :, 0, 0, 0]
    per = 180 // step
    for k in range(len(knots) - 1):
        seg = v[k * per:(k + 1) * per + 1]
        lo, hi = min(knots[k], knots[k + 1]), max(knots[k], knots[k + 1])
        assert seg.min() >= np.float32(lo) and seg.max() <= np.float32(hi)
