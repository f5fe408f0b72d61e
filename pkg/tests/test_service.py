import json
import threading
import urllib.error
import urllib.request
from datetime import datetime, timezone

import pytest

from reroute.advisory import PredictionTarget
from reroute.errors import BadRequest, InvalidConfig, RangeUncovered, UnknownTarget
from reroute.service import ModelRegistry, PredictionServer, Predictor, handle_prediction_request
from reroute.weather import GridStore

QUERY = "kind=ARTCC&key=ZNY&from=2019-06-02T00:00Z&to=2019-06-02T03:00Z"


@pytest.fixture(scope="module")
def server(trained_scenario):
    _, config, _ = trained_scenario
    srv = PredictionServer(("127.0.0.1", 0), config.registry_path, config.grids)
    thread = threading.Thread(target=srv.serve_forever, daemon=True)
    thread.start()
    yield srv
    srv.shutdown()
    srv.server_close()


def get(srv, path):
    url = f"http://127.0.0.1:{srv.server_address[1]}{path}"
    try:
        with urllib.request.urlopen(url, timeout=30) as resp:
            return resp.status, resp.read()
    except urllib.error.HTTPError as err:
        return err.code, err.read()


def test_health(server):
    status, body = get(server, "/v1/health")
    assert status == 200
    assert json.loads(body) == {"models": 1, "status": "ok"}


def test_models_lists_trained_target(server):
    status, body = get(server, "/v1/models")
    models = json.loads(body)["models"]
    assert status == 200 and len(models) == 1
    assert models[0]["target"] == {"kind": "ARTCC", "key": "ZNY"}


def test_three_hour_prediction(server):
    status, body = get(server, f"/v1/predictions?{QUERY}")
    assert status == 200
    data = json.loads(body)
    assert data["target"] == {"kind": "ARTCC", "key": "ZNY"}
    assert len(data["buckets"]) == 12
    assert data["buckets"][0]["bucket_start"] == "2019-06-02T00:00:00Z"
    assert data["buckets"][-1]["bucket_start"] == "2019-06-02T02:45:00Z"
    threshold = data["model"]["threshold"]
    for b in data["buckets"]:
        assert 0.0 <= b["probability"] <= 1.0
        assert b["predicted"] == int(b["probability"] >= threshold)


def test_identical_queries_identical_bodies(server):
    bodies = {get(server, f"/v1/predictions?{QUERY}")[1] for _ in range(3)}
    assert len(bodies) == 1


def test_concurrent_queries(server):
    results = []

    def worker():
        results.append(get(server, f"/v1/predictions?{QUERY}"))

    threads = [threading.Thread(target=worker) for _ in range(6)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(results) == 6 and len({r[1] for r in results}) == 1 and all(r[0] == 200 for r in results)


@pytest.mark.parametrize("query,status,kind", [
    ("kind=ARTCC&key=ZZZ&from=2019-06-02T00:00Z&to=2019-06-02T03:00Z", 404, "UnknownTarget"),
    ("kind=ARTCC&key=ZNY&from=yesterday&to=2019-06-02T03:00Z", 400, "BadRequest"),
    ("kind=ARTCC&key=ZNY&from=2019-06-02T00:07Z&to=2019-06-02T03:00Z", 400, "BadRequest"),
    ("kind=ARTCC&key=ZNY&from=2019-06-02T03:00Z&to=2019-06-02T00:00Z", 400, "BadRequest"),
    ("kind=ARTCC&key=ZNY&from=2019-06-02T00:00Z&to=2019-06-06T00:00Z", 400, "BadRequest"),
    ("kind=PLANET&key=ZNY&from=2019-06-02T00:00Z&to=2019-06-02T03:00Z", 400, "BadRequest"),
    ("key=ZNY&from=2019-06-02T00:00Z&to=2019-06-02T03:00Z", 400, "BadRequest"),
    ("kind=ARTCC&key=ZNY&from=2021-01-01T00:00Z&to=2021-01-01T03:00Z", 422, "RangeUncovered"),
])
def test_error_statuses(server, query, status, kind):
    code, body = get(server, f"/v1/predictions?{query}")
    assert code == status
    err = json.loads(body)["error"]
    assert err["kind"] == kind and err["message"]


def test_unknown_route(server):
    assert get(server, "/v2/anything")[0] == 404


def test_reload_only_on_request(trained_scenario, tmp_path):
    _, config, _ = trained_scenario
    registry = ModelRegistry.load(config.registry_path)
    path = tmp_path / "registry.json"
    registry.save(path)
    srv = PredictionServer(("127.0.0.1", 0), path, config.grids)
    thread = threading.Thread(target=srv.serve_forever, daemon=True)
    thread.start()
    try:
        entry = registry.entries[0]
        registry.with_entry(PredictionTarget.advisory_name("J109 WEVEL MODIFIED"), entry.model_path,
                            entry.report_path).save(path)
        assert json.loads(get(srv, "/v1/health")[1])["models"] == 1
        srv.reload()
        assert json.loads(get(srv, "/v1/health")[1])["models"] == 2
    finally:
        srv.shutdown()
        srv.server_close()


def test_predictor_direct(trained_scenario):
    _, config, _ = trained_scenario
    predictor = Predictor(ModelRegistry.load(config.registry_path), GridStore(config.grids))
    resp = predictor.predict("ARTCC", "ZNY", "2019-06-03T06:00Z", "2019-06-03T07:00Z")
    assert len(resp.to_dict()["buckets"]) == 4
    with pytest.raises(UnknownTarget):
        predictor.predict("ARTCC", "ZOB", "2019-06-03T06:00Z", "2019-06-03T07:00Z")
    model = predictor.model(predictor.registry.entries[0])
    t = lambda h: datetime(2019, 6, 3, h, tzinfo=timezone.utc)  # noqa: E731
    with pytest.raises(BadRequest):
        handle_prediction_request(model, PredictionTarget.artcc("ZNY"), t(6), t(9), GridStore(config.grids),
                                  horizon_hours=2)
    with pytest.raises(RangeUncovered):
        handle_prediction_request(model, PredictionTarget.artcc("ZNY"), datetime(2030, 1, 1, tzinfo=timezone.utc),
                                  datetime(2030, 1, 1, 1, tzinfo=timezone.utc), GridStore(config.grids))


# --- registry --------------------------------------------------------------

def test_registry_round_trip_and_missing(tmp_path):
    reg = ModelRegistry().with_entry(PredictionTarget.artcc("ZNY"), tmp_path / "m.json", tmp_path / "r.json",
                                     created_at="2020-01-01T00:00:00Z")
    reg.save(tmp_path / "reg.json")
    back = ModelRegistry.load(tmp_path / "reg.json")
    assert back.to_dict() == reg.to_dict()
    assert len(ModelRegistry.load_or_empty(tmp_path / "none.json")) == 0
    with pytest.raises(InvalidConfig):
        ModelRegistry.load(tmp_path / "none.json")
    with pytest.raises(UnknownTarget):
        back.lookup(PredictionTarget.artcc("ZDC"))


def test_registry_writes_are_atomic(tmp_path):
    path = tmp_path / "reg.json"
    small = ModelRegistry().with_entry(PredictionTarget.artcc("ZNY"), "m1", "r1", created_at="x")
    big = small
    for code in ("ZDC", "ZOB", "ZLC", "ZMA", "ZLA", "ZAU", "ZID", "ZKC"):
        big = big.with_entry(PredictionTarget.artcc(code), "m" * 500, "r" * 500, created_at="x")
    small.save(path)
    stop = threading.Event()
    errors = []

    def writer():
        i = 0
        while not stop.is_set():
            (big if i % 2 else small).save(path)
            i += 1

    def reader():
        for _ in range(300):
            try:
                n = len(ModelRegistry.load(path))
            except Exception as exc:  # a torn file would show up here
                errors.append(exc)
                continue
            if n not in (1, 9):
                errors.append(n)

    w = threading.Thread(target=writer)
    w.start()
    try:
        reader()
    finally:
        stop.set()
        w.join()
    assert errors == []
    assert not list(tmp_path.glob(".registry-*"))
