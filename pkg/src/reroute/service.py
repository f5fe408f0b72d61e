"""Model registry and the HTTP prediction service.

Wire format (JSON, UTF-8, keys sorted):

``GET /v1/health``
    ``{"status": "ok", "models": <count>}``
``GET /v1/models``
    ``{"models": [{"target": {"kind", "key"}, "model_path", "report_path", "created_at"}, ...]}``
``GET /v1/predictions?kind=ARTCC&key=ZNY&from=2019-06-01T00:00Z&to=2019-06-01T03:00Z``
    ``{"target": {...}, "model": {"algorithm", "learner_id", "threshold", "trained_at"},
    "buckets": [{"bucket_start", "probability", "predicted"}, ...]}``

Errors come back as ``{"error": {"kind": "UnknownTarget", "message": "..."}}``
with status 404 (unknown target), 422 (range not covered or not usable) or
400 (malformed query).
"""

from __future__ import annotations

import json
import logging
import os
import signal
import tempfile
import threading
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlsplit

from .advisory import PredictionTarget, parse_utc
from .errors import (
    BadRequest,
    CorruptModel,
    InvalidConfig,
    MalformedTime,
    RangeUncovered,
    RerouteError,
    SchemaMismatch,
    UnknownTarget,
)
from .models import TrainedModel, load_model
from .pipeline import FeatureConfig, predict_range
from .weather import GridStore

logger = logging.getLogger(__name__)

REGISTRY_ENV = "REROUTE_REGISTRY"
REGISTRY_FORMAT = "reroute-registry"
DEFAULT_HORIZON_HOURS = 72


def default_registry_path() -> Path:
    return Path(os.environ.get(REGISTRY_ENV, "out/registry.json"))


def _utc_text(t: datetime) -> str:
    return t.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class RegistryEntry:
    target: PredictionTarget
    model_path: Path
    report_path: Path
    created_at: str

    def to_dict(self) -> dict:
        return {"target": self.target.to_dict(), "model_path": str(self.model_path),
                "report_path": str(self.report_path), "created_at": self.created_at}


class ModelRegistry:
    """Immutable map from target to its active model; updates return a new registry."""

    def __init__(self, entries: dict[PredictionTarget, RegistryEntry] | None = None):
        self._entries = dict(entries or {})

    @property
    def entries(self) -> list[RegistryEntry]:
        return sorted(self._entries.values(), key=lambda e: (e.target.kind.value, e.target.key))

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, target: PredictionTarget) -> bool:
        return target in self._entries

    def lookup(self, target: PredictionTarget) -> RegistryEntry:
        try:
            return self._entries[target]
        except KeyError:
            raise UnknownTarget(f"no model registered for {target}") from None

    def with_entry(self, target: PredictionTarget, model_path: str | Path, report_path: str | Path,
                   created_at: str | None = None) -> "ModelRegistry":
        stamp = created_at or _utc_text(datetime.now(timezone.utc))
        entries = dict(self._entries)
        entries[target] = RegistryEntry(target, Path(model_path).resolve(), Path(report_path).resolve(), stamp)
        return ModelRegistry(entries)

    def to_dict(self) -> dict:
        return {"format": REGISTRY_FORMAT, "models": [e.to_dict() for e in self.entries]}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelRegistry":
        if not isinstance(d, dict) or d.get("format") != REGISTRY_FORMAT:
            raise CorruptModel("not a model registry file")
        entries = {}
        for item in d.get("models", []):
            t = PredictionTarget(item["target"]["kind"], item["target"]["key"])
            entries[t] = RegistryEntry(t, Path(item["model_path"]), Path(item["report_path"]),
                                       item.get("created_at", ""))
        return cls(entries)

    @classmethod
    def load(cls, path: str | Path) -> "ModelRegistry":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise InvalidConfig(f"registry {path} does not exist") from None
        except json.JSONDecodeError as exc:
            raise CorruptModel(f"{path}: {exc}") from exc
        return cls.from_dict(data)

    @classmethod
    def load_or_empty(cls, path: str | Path) -> "ModelRegistry":
        return cls.load(path) if Path(path).exists() else cls()

    def save(self, path: str | Path) -> None:
        """Write to a sibling temp file, then rename over ``path``."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=".registry-", dir=path.parent)
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
                fh.write("\n")
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise


@dataclass(frozen=True)
class PredictionResponse:
    target: PredictionTarget
    buckets: list[dict]
    algorithm: str
    learner_id: str
    threshold: float
    trained_at: str

    def to_dict(self) -> dict:
        return {"target": self.target.to_dict(),
                "model": {"algorithm": self.algorithm, "learner_id": self.learner_id,
                          "threshold": self.threshold, "trained_at": self.trained_at},
                "buckets": self.buckets}


def _parse_query_time(name: str, value: str | None) -> datetime:
    if not value:
        raise BadRequest(f"missing '{name}' parameter")
    try:
        return parse_utc(value)
    except (MalformedTime, ValueError) as exc:
        raise BadRequest(f"'{name}' is not a UTC timestamp: {value!r}") from exc


class Predictor:
    """Answers prediction queries against one registry snapshot; models are cached."""

    def __init__(self, registry: ModelRegistry, grid_store: GridStore,
                 horizon_hours: int = DEFAULT_HORIZON_HOURS):
        self.registry = registry
        self.grid_store = grid_store
        self.horizon_hours = horizon_hours
        self._models: dict[Path, TrainedModel] = {}
        self._lock = threading.Lock()

    def model(self, entry: RegistryEntry) -> TrainedModel:
        with self._lock:
            if entry.model_path not in self._models:
                self._models[entry.model_path] = load_model(entry.model_path)
            return self._models[entry.model_path]

    def predict(self, kind: str | None, key: str | None, start: str | None, end: str | None) -> PredictionResponse:
        if not kind or not key:
            raise BadRequest("query needs 'kind' and 'key'")
        try:
            target = PredictionTarget(kind, key)
        except (ValueError, RerouteError) as exc:
            raise BadRequest(str(exc)) from exc
        t0 = _parse_query_time("from", start)
        t1 = _parse_query_time("to", end)
        entry = self.registry.lookup(target)
        model = self.model(entry)
        return handle_prediction_request(model, target, t0, t1, self.grid_store, self.horizon_hours,
                                         entry.created_at)


def handle_prediction_request(model: TrainedModel, target: PredictionTarget, start: datetime, end: datetime,
                              grid_store: GridStore, horizon_hours: int = DEFAULT_HORIZON_HOURS,
                              trained_at: str = "") -> PredictionResponse:
    if end <= start:
        raise BadRequest("'to' must be later than 'from'")
    if end - start > timedelta(hours=horizon_hours):
        raise BadRequest(f"range exceeds the {horizon_hours} h prediction horizon")
    bucket = FeatureConfig.from_dict(model.metadata.get("pipeline", {})).bucket_minutes
    for name, t in (("from", start), ("to", end)):
        if t.second or t.microsecond or (t.hour * 60 + t.minute) % bucket:
            raise BadRequest(f"'{name}' is not aligned to {bucket}-minute buckets")
    rows = predict_range(model, grid_store, start, end)
    buckets = [{"bucket_start": _utc_text(r.bucket_start), "probability": r.probability, "predicted": r.predicted}
               for r in rows]
    return PredictionResponse(target, buckets, model.algorithm, model.learner_id, model.threshold, trained_at)


def _status_for(exc: RerouteError) -> HTTPStatus:
    if isinstance(exc, UnknownTarget):
        return HTTPStatus.NOT_FOUND
    if isinstance(exc, BadRequest):
        return HTTPStatus.BAD_REQUEST
    if isinstance(exc, (RangeUncovered, SchemaMismatch)):
        return HTTPStatus.UNPROCESSABLE_ENTITY
    return HTTPStatus.UNPROCESSABLE_ENTITY


class _Handler(BaseHTTPRequestHandler):
    server: "PredictionServer"
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):
        logger.info("%s %s", self.address_string(), fmt % args)

    def _send(self, status: HTTPStatus, body: dict) -> None:
        data = (json.dumps(body, sort_keys=True) + "\n").encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def do_GET(self):
        url = urlsplit(self.path)
        predictor = self.server.predictor  # one snapshot for the whole request
        try:
            if url.path == "/v1/health":
                self._send(HTTPStatus.OK, {"status": "ok", "models": len(predictor.registry)})
            elif url.path == "/v1/models":
                self._send(HTTPStatus.OK, {"models": [e.to_dict() for e in predictor.registry.entries]})
            elif url.path == "/v1/predictions":
                q = {k: v[-1] for k, v in parse_qs(url.query).items()}
                resp = predictor.predict(q.get("kind"), q.get("key"), q.get("from"), q.get("to"))
                self._send(HTTPStatus.OK, resp.to_dict())
            else:
                self._send(HTTPStatus.NOT_FOUND, {"error": {"kind": "NotFound", "message": url.path}})
        except RerouteError as exc:
            self._send(_status_for(exc), {"error": {"kind": exc.kind, "message": exc.args[0] if exc.args else ""}})
        except Exception as exc:  # keep the worker alive
            logger.exception("request failed")
            self._send(HTTPStatus.INTERNAL_SERVER_ERROR, {"error": {"kind": type(exc).__name__, "message": str(exc)}})


class PredictionServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, address: tuple[str, int], registry_path: str | Path, grid_store: str | Path,
                 horizon_hours: int = DEFAULT_HORIZON_HOURS):
        self.registry_path = Path(registry_path)
        self.grid_root = Path(grid_store)
        self.horizon_hours = horizon_hours
        self.predictor = self._snapshot()
        super().__init__(address, _Handler)

    def _snapshot(self) -> Predictor:
        return Predictor(ModelRegistry.load(self.registry_path), GridStore(self.grid_root), self.horizon_hours)

    def reload(self) -> None:
        """Swap in a fresh registry snapshot; in-flight requests keep the old one."""
        self.predictor = self._snapshot()
        logger.info("registry reloaded: %d models", len(self.predictor.registry))


def serve(port: int, registry_path: str | Path, grid_store: str | Path, host: str = "127.0.0.1",
          horizon_hours: int = DEFAULT_HORIZON_HOURS) -> None:
    """Run until interrupted. SIGHUP reloads the registry."""
    server = PredictionServer((host, port), registry_path, grid_store, horizon_hours)
    if hasattr(signal, "SIGHUP") and threading.current_thread() is threading.main_thread():
        signal.signal(signal.SIGHUP, lambda *_: server.reload())
    logger.info("serving on %s:%d", host, server.server_address[1])
    try:
        server.serve_forever()
    finally:
        server.server_close()
