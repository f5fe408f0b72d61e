"""Command-line entry point: ``reroute <subcommand> [--config FILE] [--seed N] ...``.

Exit status is 0 on success, 1 on a typed pipeline error (printed as
``Kind: message`` on stderr) and 2 on a usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from .advisory import ingest_directory, save_records
from .errors import InvalidConfig, RerouteError
from .features import fit_normalization
from .models import load_model
from .pipeline import evaluate, load_config, train
from .service import DEFAULT_HORIZON_HOURS, ModelRegistry, Predictor, default_registry_path, serve
from .synthgen import ScenarioConfig, generate_scenario
from .weather import GridStore, load_grid


class UsageError(Exception):
    pass


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="pipeline (or scenario) configuration file")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="reroute", description="Reroute advisory prediction pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest-advisories", parents=[common], help="parse advisory text files into a line store")
    p.add_argument("input", type=Path, help="directory of advisory text files")
    p.add_argument("output", type=Path, help="curated store to write (.jsonl)")
    p.add_argument("--pattern", default="*.txt")
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("ingest-weather", parents=[common], help="validate a grid store and fit normalization ranges")
    p.add_argument("grids", type=Path, help="directory of grid directories")
    p.add_argument("--normalization", type=Path, help="write fitted ranges to this file")

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic scenario")
    p.add_argument("output", type=Path)
    p.add_argument("--days", type=int)
    p.add_argument("--n-estimators", type=int, default=200, help="trees per forest in the written training config")

    sub.add_parser("train", parents=[common], help="train, select and register models")
    sub.add_parser("evaluate", parents=[common], help="cross-validate without registering")

    p = sub.add_parser("predict", parents=[common], help="predict buckets for one target")
    p.add_argument("--kind", required=True, choices=["ARTCC", "ADVISORY_NAME"])
    p.add_argument("--key", required=True)
    p.add_argument("--from", dest="start", required=True)
    p.add_argument("--to", dest="end", required=True)
    p.add_argument("--registry", type=Path)
    p.add_argument("--grids", type=Path)

    p = sub.add_parser("serve", parents=[common], help="run the HTTP prediction service")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--registry", type=Path)
    p.add_argument("--grids", type=Path)
    p.add_argument("--horizon-hours", type=int, default=DEFAULT_HORIZON_HOURS)
    return parser


def _need_config(args) -> None:
    if args.config is None:
        raise UsageError(f"{args.command} needs --config")


def _registry_and_grids(args) -> tuple[Path, Path]:
    registry, grids = args.registry, args.grids
    if args.config is not None:
        cfg = load_config(args.config, args.seed)
        registry = registry or cfg.registry_path
        grids = grids or cfg.grids
    registry = registry or default_registry_path()
    if grids is None:
        raise UsageError("give --grids or a --config naming the grid store")
    return registry, grids


def cmd_ingest_advisories(args) -> int:
    records = ingest_directory(args.input, args.pattern, args.workers)
    args.output.parent.mkdir(parents=True, exist_ok=True)
    save_records(records, args.output)
    print(f"{len(records)} advisories written to {args.output}")
    return 0


def cmd_ingest_weather(args) -> int:
    store = GridStore(args.grids)
    grids = [load_grid(path) for path, _ in store.entries]
    stats = fit_normalization(grids)
    first, last = store.entries[0][1].valid_times[0], store.entries[-1][1].valid_times[-1]
    print(f"{len(grids)} grid directories valid, covering {first} .. {last}")
    for p, (lo, hi) in sorted(stats.ranges.items()):
        print(f"  {p:<5} [{lo:.4g}, {hi:.4g}]")
    if args.normalization:
        args.normalization.write_text(json.dumps({"ranges": stats.to_dict()}, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_synth(args) -> int:
    data = {}
    if args.config is not None:
        if not args.config.is_file():
            raise InvalidConfig(f"scenario file {args.config} not found")
        data = yaml.safe_load(args.config.read_text()) or {}
    if args.days is not None:
        data["days"] = args.days
    if args.seed is not None:
        data["seed"] = args.seed
    config = ScenarioConfig.from_dict(data)
    scenario = generate_scenario(config, args.output)
    if args.n_estimators != 200:
        from .synthgen import pipeline_config
        cfg = pipeline_config(config, scenario.start, scenario.end, args.n_estimators)
        scenario.config_path.write_text(yaml.safe_dump(cfg, sort_keys=True))
    print(f"{len(scenario.grid_dirs)} grid directories, {len(scenario.advisory_paths)} advisories, "
          f"{len(scenario.events)} event days")
    print(f"training config: {scenario.config_path}")
    return 0


def cmd_train(args) -> int:
    _need_config(args)
    config = load_config(args.config, args.seed)
    for res in train(config):
        m = res.report.mean[res.report.winner]
        print(f"{res.target}: winner {res.report.winner} accuracy={m.accuracy:.4f} "
              f"coverage={m.reroute_coverage:.4f} score={m.reroute_detection_score:.4f}")
        print(res.report.table())
        print(f"  model  {res.model_path}\n  report {res.report_path}")
    print(f"registry: {config.registry_path}")
    return 0


def cmd_evaluate(args) -> int:
    _need_config(args)
    config = load_config(args.config, args.seed)
    for target, report in evaluate(config):
        print(f"{target}")
        print(report.table())
    return 0


def cmd_predict(args) -> int:
    registry_path, grids = _registry_and_grids(args)
    predictor = Predictor(ModelRegistry.load(registry_path), GridStore(grids))
    resp = predictor.predict(args.kind, args.key, args.start, args.end)
    print(json.dumps(resp.to_dict(), indent=2, sort_keys=True))
    return 0


def cmd_serve(args) -> int:
    registry_path, grids = _registry_and_grids(args)
    ModelRegistry.load(registry_path)  # fail fast before binding the port
    try:
        serve(args.port, registry_path, grids, args.host, args.horizon_hours)
    except KeyboardInterrupt:
        pass
    return 0


COMMANDS = {
    "ingest-advisories": cmd_ingest_advisories,
    "ingest-weather": cmd_ingest_weather,
    "synth": cmd_synth,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
    "serve": cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"reroute: error: {exc}", file=sys.stderr)
        return 2
    except RerouteError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except OSError as exc:
        if isinstance(exc, OSError) and exc.errno == 98:
            print(f"PortInUse: {exc}", file=sys.stderr)
        else:
            print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
