"""ATCSCC reroute advisory parsing and label timelines.

Advisory text follows the layout of a published ``ROUTE RQD`` advisory::

    ATCSCC ADVZY 003 DCC 12/08/11 ROUTE RQD
    NAME: J109 WEVEL MODIFIED
    CONSTRAINED AREA: ZNY ZDC
    ...
    VALID: ETD 080020 TO 080300
    ...
    ROUTES:

    ORIG      DEST      ROUTE
    ----      -
    BWI DCA IAD  SYR      >JERES J211 LEONI J109
    WEVEL ELZ<

Header fields are ``KEY: value`` lines starting in column 0; indented lines
continue the previous field. Route rows start with the origin and destination
groups separated by two or more blanks, followed by a route opened with ``>``
or ``RERTE:``; unindented lines without that shape continue the open route.
"""

from __future__ import annotations

import enum
import json
import logging
import re
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyRange, InvalidConfig, MalformedTime, MissingField

logger = logging.getLogger(__name__)

ARTCC_RE = re.compile(r"^Z[A-Z]{2}$")

_HEADER_RE = re.compile(
    r"^(?P<id>ATCSCC\s+ADVZY\s+\d+)\s+(?P<facility>\S+)\s+"
    r"(?P<date>\d{2}/\d{2}/\d{2})\s*(?P<kind>.*)$"
)
_KEY_RE = re.compile(r"^(?P<key>[A-Z][A-Z /]*?):(?P<value>.*)$")
_VALID_RE = re.compile(r"^(?:(?:ETD|ETA)\s+)?(?P<start>\S+)\s+TO\s+(?P<end>\S+)")
_ROW_RE = re.compile(r"^(?P<orig>\S.*?)\s{2,}(?P<dest>\S.*?)\s{2,}(?P<route>(?:>|RERTE:).*)$")
_FOOTER_STAMP_RE = re.compile(r"^(\d{2})/(\d{2})/(\d{2})\s+(\d{2}):(\d{2})")
_FOOTER_RANGE_RE = re.compile(r"^\d{6}-\d{6}$")
_TABLE_HEADER_RE = re.compile(r"^ORIG\s+DEST\s+ROUTE\s*$")
_TABLE_RULE_RE = re.compile(r"^-+(\s+-+)*\s*$")

FIELD_NAMES = (
    "advisory_id", "name", "constrained_artccs", "reason", "reason_text",
    "include_traffic", "facilities", "flight_status", "valid_start",
    "valid_end", "probability_of_extension", "remarks", "routes", "issued_at",
)


class Reason(str, enum.Enum):
    WEATHER = "WEATHER"
    VOLUME = "VOLUME"
    OTHER = "OTHER"


class Extension(str, enum.Enum):
    LOW = "LOW"
    MEDIUM = "MEDIUM"
    HIGH = "HIGH"
    NONE = "NONE"


class TargetKind(str, enum.Enum):
    ARTCC = "ARTCC"
    ADVISORY_NAME = "ADVISORY_NAME"


def normalize_name(name: str) -> str:
    """Uppercase and collapse internal whitespace."""
    return " ".join(name.upper().split())


@dataclass(frozen=True)
class RouteEntry:
    origins: tuple[str, ...]
    destinations: tuple[str, ...]
    route_string: str


@dataclass(frozen=True)
class AdvisoryRecord:
    advisory_id: str
    name: str
    constrained_artccs: tuple[str, ...]
    reason: Reason
    valid_start: datetime
    valid_end: datetime
    issued_at: datetime
    reason_text: str = ""
    include_traffic: str = ""
    facilities: tuple[str, ...] = ()
    flight_status: str = ""
    probability_of_extension: Extension = Extension.NONE
    remarks: str = ""
    routes: tuple[RouteEntry, ...] = ()

    def to_dict(self) -> dict:
        return {
            "advisory_id": self.advisory_id,
            "name": self.name,
            "constrained_artccs": list(self.constrained_artccs),
            "reason": self.reason.value,
            "reason_text": self.reason_text,
            "include_traffic": self.include_traffic,
            "facilities": list(self.facilities),
            "flight_status": self.flight_status,
            "valid_start": _iso(self.valid_start),
            "valid_end": _iso(self.valid_end),
            "probability_of_extension": self.probability_of_extension.value,
            "remarks": self.remarks,
            "routes": [
                {"origins": list(r.origins), "destinations": list(r.destinations),
                 "route_string": r.route_string}
                for r in self.routes
            ],
            "issued_at": _iso(self.issued_at),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AdvisoryRecord":
        return cls(
            advisory_id=d["advisory_id"],
            name=d["name"],
            constrained_artccs=tuple(d["constrained_artccs"]),
            reason=Reason(d["reason"]),
            reason_text=d.get("reason_text", ""),
            include_traffic=d.get("include_traffic", ""),
            facilities=tuple(d.get("facilities", ())),
            flight_status=d.get("flight_status", ""),
            valid_start=parse_utc(d["valid_start"]),
            valid_end=parse_utc(d["valid_end"]),
            probability_of_extension=Extension(d.get("probability_of_extension", "NONE")),
            remarks=d.get("remarks", ""),
            routes=tuple(
                RouteEntry(tuple(r["origins"]), tuple(r["destinations"]), r["route_string"])
                for r in d.get("routes", ())
            ),
            issued_at=parse_utc(d["issued_at"]),
        )


@dataclass(frozen=True)
class PredictionTarget:
    kind: TargetKind
    key: str

    def __post_init__(self):
        kind = TargetKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is TargetKind.ARTCC:
            key = self.key.strip().upper()
            if not ARTCC_RE.match(key):
                raise InvalidConfig(f"ARTCC target key {self.key!r} is not a Z-code")
        else:
            key = normalize_name(self.key)
            if not key:
                raise InvalidConfig("advisory-name target needs a non-empty key")
        object.__setattr__(self, "key", key)

    @classmethod
    def artcc(cls, code: str) -> "PredictionTarget":
        return cls(TargetKind.ARTCC, code)

    @classmethod
    def advisory_name(cls, name: str) -> "PredictionTarget":
        return cls(TargetKind.ADVISORY_NAME, name)

    def matches(self, advisory: AdvisoryRecord) -> bool:
        if self.kind is TargetKind.ARTCC:
            return self.key in advisory.constrained_artccs
        return normalize_name(advisory.name) == self.key

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "key": self.key}

    def __str__(self) -> str:
        return f"{self.kind.value}:{self.key}"


@dataclass(frozen=True)
class LabelTimeline:
    target: PredictionTarget
    bucket_minutes: int
    start: datetime
    labels: np.ndarray = field(repr=False)

    @property
    def end(self) -> datetime:
        return self.start + timedelta(minutes=self.bucket_minutes * len(self.labels))

    @property
    def timestamps(self) -> np.ndarray:
        """Bucket start times as ``datetime64[m]``."""
        t0 = to_datetime64(self.start)
        return t0 + np.arange(len(self.labels)) * np.timedelta64(self.bucket_minutes, "m")


# ---------------------------------------------------------------------------
# time helpers

def _iso(t: datetime) -> str:
    return t.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_utc(text: str) -> datetime:
    """Parse an ISO-8601 timestamp; naive values are taken as UTC."""
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    t = datetime.fromisoformat(text)
    if t.tzinfo is None:
        t = t.replace(tzinfo=timezone.utc)
    return t.astimezone(timezone.utc)


def to_datetime64(t: datetime) -> np.datetime64:
    if t.tzinfo is not None:
        t = t.astimezone(timezone.utc).replace(tzinfo=None)
    return np.datetime64(t, "m")


def from_datetime64(t: np.datetime64) -> datetime:
    minutes = int(np.datetime64(t, "m").astype(np.int64))
    return datetime(1970, 1, 1, tzinfo=timezone.utc) + timedelta(minutes=minutes)


def _resolve_ddhhmm(token: str, issued: date) -> datetime:
    if not re.fullmatch(r"\d{6}", token):
        raise MalformedTime(f"expected DDHHMM, got {token!r}")
    day, hour, minute = int(token[:2]), int(token[2:4]), int(token[4:])
    if hour > 24 or minute > 59 or (hour == 24 and minute != 0) or day == 0:
        raise MalformedTime(f"expected DDHHMM, got {token!r}")
    year, month = issued.year, issued.month
    # advisories never point into the past: an earlier day means next month
    if day < issued.day:
        month += 1
        if month == 13:
            year, month = year + 1, 1
    try:
        base = datetime(year, month, day, tzinfo=timezone.utc)
    except ValueError as exc:
        raise MalformedTime(f"day {day} does not exist in {year}-{month:02d}") from exc
    return base + timedelta(hours=hour, minutes=minute)


# ---------------------------------------------------------------------------
# parsing

def _strip_route_markers(text: str) -> str:
    text = text.strip()
    if text.startswith("RERTE:"):
        text = text[len("RERTE:"):]
    text = text.lstrip(">").rstrip("<")
    return " ".join(text.split())


def _parse_routes(lines: Sequence[str]) -> list[RouteEntry]:
    rows: list[list] = []
    open_route = False
    for line in lines:
        if not line.strip():
            open_route = False
            continue
        if _TABLE_HEADER_RE.match(line) or _TABLE_RULE_RE.match(line):
            continue
        m = _ROW_RE.match(line)
        if m:
            rows.append([m["orig"].split(), m["dest"].split(), m["route"]])
            open_route = not m["route"].rstrip().endswith("<")
        elif rows and (open_route or not line[0].isspace()):
            rows[-1][2] += " " + line.strip()
            if line.rstrip().endswith("<"):
                open_route = False
    routes = []
    for origins, destinations, raw in rows:
        route = _strip_route_markers(raw)
        if origins and destinations and route:
            routes.append(RouteEntry(tuple(origins), tuple(destinations), route))
    return routes


def parse_advisory(text: str) -> AdvisoryRecord:
    """Parse one advisory body into an :class:`AdvisoryRecord`.

    Raises :class:`MissingField` when NAME, CONSTRAINED AREA or VALID is
    absent and :class:`MalformedTime` when a DDHHMM token does not parse.
    """
    lines = [ln.rstrip("\r") for ln in text.splitlines()]
    while lines and not lines[0].strip():
        lines.pop(0)
    if not lines:
        raise MissingField("ADVZY HEADER")
    head = _HEADER_RE.match(lines[0].strip())
    if head is None:
        raise MissingField("ADVZY HEADER")
    advisory_id = " ".join(head["id"].split())
    try:
        issued_day = datetime.strptime(head["date"], "%m/%d/%y").date()
    except ValueError as exc:
        raise MalformedTime(f"bad issue date {head['date']!r}") from exc

    fields: dict[str, str] = {}
    table: list[str] = []
    footer_stamp = None
    key = None
    in_table = False
    for line in lines[1:]:
        stripped = line.strip()
        if _FOOTER_STAMP_RE.match(stripped):
            footer_stamp = _FOOTER_STAMP_RE.match(stripped)
            in_table, key = False, None
            continue
        if _FOOTER_RANGE_RE.match(stripped):
            continue
        if in_table:
            if line.startswith("TMI ID:"):
                in_table = False
            else:
                table.append(line)
                continue
        m = _KEY_RE.match(line)
        if m:
            key = m["key"].strip()
            fields[key] = m["value"].strip()
            if key == "ROUTES":
                in_table = True
            continue
        if key is not None and stripped and line[0].isspace():
            fields[key] = (fields[key] + " " + stripped).strip()

    for required in ("NAME", "CONSTRAINED AREA", "VALID"):
        if not fields.get(required):
            raise MissingField(required)

    artccs = tuple(t for t in re.split(r"[\s/]+", fields["CONSTRAINED AREA"]) if ARTCC_RE.match(t))
    if not artccs:
        raise MissingField("CONSTRAINED AREA")

    valid = _VALID_RE.match(fields["VALID"])
    if valid is None:
        raise MalformedTime(f"cannot read validity {fields['VALID']!r}")
    valid_start = _resolve_ddhhmm(valid["start"], issued_day)
    valid_end = _resolve_ddhhmm(valid["end"], issued_day)
    if valid_end <= valid_start:
        raise MalformedTime(f"validity ends before it starts: {fields['VALID']!r}")

    reason_text = fields.get("REASON", "")
    try:
        reason = Reason(reason_text.upper())
    except ValueError:
        reason = Reason.OTHER
    try:
        extension = Extension(fields.get("PROBABILITY OF EXTENSION", "NONE").upper() or "NONE")
    except ValueError:
        extension = Extension.NONE

    if footer_stamp is not None:
        yy, mm, dd, hh, mi = (int(g) for g in footer_stamp.groups())
        issued_at = datetime(2000 + yy, mm, dd, hh, mi, tzinfo=timezone.utc)
    else:
        issued_at = datetime(issued_day.year, issued_day.month, issued_day.day, tzinfo=timezone.utc)

    facilities = tuple(t for t in re.split(r"[\s/]+", fields.get("FACILITIES INCLUDED", "")) if t)
    return AdvisoryRecord(
        advisory_id=advisory_id,
        name=" ".join(fields["NAME"].split()),
        constrained_artccs=artccs,
        reason=reason,
        reason_text=reason_text,
        include_traffic=fields.get("INCLUDE TRAFFIC", ""),
        facilities=facilities,
        flight_status=fields.get("FLIGHT STATUS", ""),
        valid_start=valid_start,
        valid_end=valid_end,
        probability_of_extension=extension,
        remarks=fields.get("REMARKS", ""),
        routes=tuple(_parse_routes(table)),
        issued_at=issued_at,
    )


def _parse_file(path: Path):
    try:
        return parse_advisory(path.read_text(encoding="utf-8"))
    except (MissingField, MalformedTime) as exc:
        return exc


def ingest_directory(path: str | Path, pattern: str = "*.txt", workers: int = 1) -> list[AdvisoryRecord]:
    """Parse every advisory file under ``path``.

    Rejected files are logged and skipped. Output is ordered by
    ``(issued_at, advisory_id)`` regardless of ``workers``.
    """
    files = sorted(Path(path).glob(pattern))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(_parse_file, files))
    else:
        results = [_parse_file(f) for f in files]
    records = []
    for f, res in zip(files, results):
        if isinstance(res, Exception):
            logger.warning("skipping %s: %s", f.name, res)
        else:
            records.append(res)
    records.sort(key=lambda r: (r.issued_at, r.advisory_id))
    return records


def save_records(records: Iterable[AdvisoryRecord], path: str | Path) -> None:
    """Write the curated store: one JSON object per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")


def load_records(path: str | Path) -> list[AdvisoryRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(AdvisoryRecord.from_dict(json.loads(line)))
    return records


def load_advisories(path: str | Path) -> list[AdvisoryRecord]:
    """Load either a directory of advisory text files or a curated line store."""
    path = Path(path)
    if path.is_dir():
        return ingest_directory(path)
    return load_records(path)


# ---------------------------------------------------------------------------
# labels

def build_label_timeline(
    advisories: Sequence[AdvisoryRecord],
    target: PredictionTarget,
    bucket_minutes: int,
    start: datetime,
    end: datetime,
) -> LabelTimeline:
    """Label each bucket of ``[start, end)`` with 1 when a matching advisory overlaps it."""
    if bucket_minutes <= 0 or 60 % bucket_minutes:
        raise InvalidConfig(f"bucket_minutes={bucket_minutes} must divide 60")
    if start >= end:
        raise EmptyRange(f"{_iso(start)} >= {_iso(end)}")
    step = timedelta(minutes=bucket_minutes)
    for t in (start, end):
        if t.second or t.microsecond or t.minute % bucket_minutes:
            raise InvalidConfig(f"{_iso(t)} is not aligned to {bucket_minutes}-minute buckets")
    span = end - start
    if span % step:
        raise InvalidConfig("range is not a whole number of buckets")
    n = span // step
    labels = np.zeros(n, dtype=np.uint8)
    for adv in advisories:
        if not target.matches(adv):
            continue
        # bucket i covers [start + i*step, start + (i+1)*step)
        lo = (adv.valid_start - start) // step
        hi = -((start - adv.valid_end) // step)  # ceil division
        lo, hi = max(lo, 0), min(hi, n)
        if lo < hi:
            labels[lo:hi] = 1
    return LabelTimeline(target, bucket_minutes, start, labels)


def rank_advisory_names(advisories: Sequence[AdvisoryRecord], n: int) -> list[tuple[str, int]]:
    """Most frequent advisory names, counted per distinct issuance."""
    if n < 1:
        raise ValueError("n must be >= 1")
    seen = set()
    counts: Counter = Counter()
    for adv in advisories:
        ident = (adv.advisory_id, adv.issued_at)
        if ident in seen:
            continue
        seen.add(ident)
        counts[normalize_name(adv.name)] += 1
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return ranked[:n]
