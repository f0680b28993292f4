"""Command line: ``qdtradeoff run|evaluate|project|report|campaign|tasks``.

Exit codes: 0 success, 1 runtime failure, 2 invalid configuration or input.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness
from .core import DeltaPreference
from .harness import ConfigError, RunError
from .tasks import list_tasks

log = logging.getLogger("qdtradeoff")

# inline flag -> RunConfig field
RUN_FLAGS = {
    "task": "task",
    "algorithm": "algorithm",
    "seed": "seed",
    "generations": "generations",
    "sampling_size": "sampling_size",
    "fixed_samples": "fixed_samples",
    "depth": "depth",
    "delta_f": "delta_f",
    "delta_r": "delta_r",
    "workers": "workers",
    "label": "label",
}


def _read_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None


def run_config_from_args(args) -> harness.RunConfig:
    data = _read_json(args.config) if args.config else {}
    for flag, key in RUN_FLAGS.items():
        value = getattr(args, flag)
        if value is not None:
            data[key] = value
    if args.delta_f is not None or args.delta_r is not None:
        # a partial override must not silently pair with the file's other half
        if args.delta_f is None or args.delta_r is None:
            raise ConfigError("--delta-f and --delta-r must be given together")
    return harness.RunConfig.from_dict(data)


def cmd_run(args) -> int:
    cfg = run_config_from_args(args)
    cfg.resolve()
    out = harness.run_single(cfg, Path(args.out) if args.out else None)
    print(out)
    return 0


def cmd_evaluate(args) -> int:
    if args.reevals < 2:
        raise ConfigError("--reevals must be at least 2")
    metric_rows, cell_rows = harness.evaluate_runs([Path(r) for r in args.run], args.reevals, args.workers)
    out = Path(args.out) if args.out else harness.default_output_root() / "evaluation"
    metrics_path, cells_path = harness.write_evaluation(metric_rows, cell_rows, out)
    print(metrics_path)
    print(cells_path)
    return 0


def cmd_project(args) -> int:
    try:
        pref = DeltaPreference(args.delta_f, args.delta_r)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out = harness.project_run(Path(args.run), pref, Path(args.out))
    print(out)
    return 0


def cmd_report(args) -> int:
    for p in args.metrics:
        if not Path(p).is_file():
            raise ConfigError(f"metrics file not found: {p}")
    out = harness.report([Path(p) for p in args.metrics], Path(args.out),
                         [Path(p) for p in args.cells or []], figures=not args.no_figures)
    print(out)
    return 0


def cmd_campaign(args) -> int:
    data = _read_json(args.config)
    if args.out:
        data["out"] = args.out
    if args.workers is not None:
        data["workers"] = args.workers
    cfg = harness.CampaignConfig.from_dict(data)
    cfg.run_configs()
    print(harness.run_campaign(cfg, figures=not args.no_figures))
    return 0


def cmd_tasks(args) -> int:
    for name in list_tasks():
        print(name)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qdtradeoff", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment")
    p.add_argument("--config", help="JSON run config; flags override its values")
    p.add_argument("--task")
    p.add_argument("--algorithm")
    p.add_argument("--seed", type=int)
    p.add_argument("--generations", type=int)
    p.add_argument("--sampling-size", type=int)
    p.add_argument("--fixed-samples", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--delta-f", type=float)
    p.add_argument("--delta-r", type=float)
    p.add_argument("--workers", type=int)
    p.add_argument("--label")
    p.add_argument("--out", help="run directory (default: $%s/<task>__<label>__seed<seed>)" % harness.OUTPUT_ENV)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("evaluate", help="reevaluate final archives and compute metrics")
    p.add_argument("--run", nargs="+", required=True, help="run directories forming one comparison set")
    p.add_argument("--reevals", type=int, default=512)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("project", help="project a Pareto archive under a preference")
    p.add_argument("--run", required=True)
    p.add_argument("--delta-f", type=float, required=True)
    p.add_argument("--delta-r", type=float, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("report", help="plot data and significance tables from metric CSVs")
    p.add_argument("--metrics", nargs="+", required=True)
    p.add_argument("--cells", nargs="*", help="per-cell CSVs (default: cells.csv next to each metrics file)")
    p.add_argument("--out", required=True)
    p.add_argument("--no-figures", action="store_true", help="write CSVs only")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("campaign", help="run, evaluate and report a task x algorithm x seed campaign")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--workers", type=int)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_campaign)

    p = sub.add_parser("tasks", help="list packaged benchmark tasks")
    p.set_defaults(func=cmd_tasks)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RunError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        log.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
