"""End to end on a synthetic scenario: generate, train, predict.

A short run by default; pass a day count for the full-size version
(``python3 demos/planted_scenario.py 120`` takes a couple of minutes).
"""
import sys
import tempfile
from datetime import timedelta
from pathlib import Path

import yaml

from reroute.models import load_model
from reroute.pipeline import load_config, predict_range, train
from reroute.synthgen import ScenarioConfig, generate_scenario, pipeline_config
from reroute.weather import GridStore

days = int(sys.argv[1]) if len(sys.argv) > 1 else 20
trees = 200 if days >= 120 else 25
root = Path(tempfile.mkdtemp(prefix="reroute-demo-"))

cfg = ScenarioConfig(days=days, seed=7, event_day_rate=0.16 if days >= 120 else 0.35)
scenario = generate_scenario(cfg, root)
print(f"{len(scenario.grid_dirs)} forecast grids, {len(scenario.advisory_paths)} advisories in {root}")
for ev in scenario.events[:5]:
    print(f"  planted event {ev.start:%Y-%m-%d %H:%M} -> {ev.end:%H:%M}")

scenario.config_path.write_text(yaml.safe_dump(pipeline_config(cfg, scenario.start, scenario.end, trees)))
config = load_config(scenario.config_path)
(result,) = train(config)
print(result.report.table())

ev = scenario.events[0]
model = load_model(result.model_path)
start = ev.start - timedelta(hours=2)
for b in predict_range(model, GridStore(config.grids), start, start + timedelta(hours=6)):
    bar = "#" * int(round(b.probability * 20))
    print(f"  {b.bucket_start:%m-%d %H:%M}  {b.probability:5.2f} {b.predicted}  {bar}")
