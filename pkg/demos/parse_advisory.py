"""Parse a reroute advisory and turn it into 15-minute labels.

    python3 demos/parse_advisory.py
"""
from datetime import datetime, timezone
from pathlib import Path

from reroute.advisory import PredictionTarget, build_label_timeline, parse_advisory

text = (Path(__file__).resolve().parents[1] / "tests" / "data" / "fig1_advisory.txt").read_text()
rec = parse_advisory(text)

print(rec.advisory_id, "|", rec.name)
print("constrained:", ", ".join(rec.constrained_artccs), "| reason:", rec.reason.value)
print("valid:", rec.valid_start.isoformat(), "->", rec.valid_end.isoformat())
for r in rec.routes:
    print(f"  {' '.join(r.origins):<14} -> {' '.join(r.destinations):<8} {r.route_string}")

# any overlap with a bucket marks it positive
start = datetime(2011, 12, 7, 23, 0, tzinfo=timezone.utc)
end = datetime(2011, 12, 8, 4, 0, tzinfo=timezone.utc)
timeline = build_label_timeline([rec], PredictionTarget.artcc("ZNY"), 15, start, end)
print("ZNY labels:", "".join(str(int(v)) for v in timeline.labels))
