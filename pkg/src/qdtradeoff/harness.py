"""Experiment configuration, run directories, evaluation and reporting.

A run directory holds ``archive.csv`` + ``archive.json`` (the final archive),
``trace.csv`` (one row per generation) and ``manifest.json`` (config hash,
timestamps, budget totals and a sha256 for every other file). Everything
except the manifest's timestamps is a deterministic function of the run
config.
"""
from __future__ import annotations

import datetime as _dt
import itertools
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .algorithms import USES_PREFERENCE, Algorithm, AlgorithmConfig, MutationConfig, run_experiment
from .archive import ParetoArchive, project_pareto_archive
from .core import DeltaPreference, EstimatorConfig
from .metrics import (
    DEFAULT_REEVALUATIONS,
    CorrectedArchive,
    cell_max_variances,
    corrected_archive,
    holm_bonferroni,
    metric_report,
    paired_rank_test,
    reevaluate_archive,
    reproducibility_contributions,
)
from .serialization import (
    ARCHIVE_CSV,
    ARCHIVE_JSON,
    SCHEMA_VERSION,
    TRACE_CSV,
    config_hash,
    fmt,
    load_archive,
    preference_from_dict,
    preference_to_dict,
    read_csv,
    save_archive,
    save_trace,
    write_csv,
    write_manifest,
)
from .stats import MIN_PAIRS
from .tasks import TaskSpec, load_task, task_from_dict, task_to_dict

log = logging.getLogger(__name__)

OUTPUT_ENV = "QDTRADEOFF_OUT"
DEFAULT_SEEDS = tuple(range(10))


class ConfigError(ValueError):
    """Invalid experiment configuration."""


class RunError(RuntimeError):
    """A run directory is missing or unreadable."""


def default_output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ENV, "qdtradeoff_runs"))


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _check_version(data: dict, what: str):
    version = data.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"{what}: unsupported schema_version {version} (expected {SCHEMA_VERSION})")


def preference_label(algorithm: str, pref: DeltaPreference | None) -> str:
    if pref is None:
        return algorithm
    return f"{algorithm}({pref.delta_f:g},{pref.delta_r:g})"


# ---------------------------------------------------------------------------
# single runs


@dataclass
class RunConfig:
    task: str
    algorithm: str
    seed: int = 0
    generations: int = 250
    sampling_size: int = 4096
    fixed_samples: int = 32
    as_initial_samples: int = 2
    depth: int = 3
    max_front_size: int = 6
    delta_f: float | None = None
    delta_r: float | None = None
    rho: float = 1e-6
    mutation: dict = field(default_factory=lambda: asdict(MutationConfig()))
    estimators: dict = field(default_factory=lambda: {k: v.value for k, v in asdict(EstimatorConfig()).items()})
    workers: int = 1
    label: str | None = None

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        _check_version(data, "run config")
        data.pop("schema_version", None)
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown run config keys: {', '.join(unknown)}")
        missing = [k for k in ("task", "algorithm") if k not in data]
        if missing:
            raise ConfigError(f"run config needs {', '.join(missing)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return dict(asdict(self), schema_version=SCHEMA_VERSION)

    def load_task(self) -> TaskSpec:
        try:
            return load_task(self.task)
        except KeyError as exc:
            raise ConfigError(str(exc.args[0])) from None
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"invalid task definition {self.task!r}: {exc}") from None

    def preference(self, task: TaskSpec) -> DeltaPreference | None:
        if (self.delta_f is None) != (self.delta_r is None):
            raise ConfigError("delta_f and delta_r must be given together")
        if self.delta_f is not None:
            try:
                return DeltaPreference(float(self.delta_f), float(self.delta_r), float(self.rho))
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        if Algorithm(self.algorithm) in USES_PREFERENCE:
            return task.default_preference
        return None

    def resolve(self) -> tuple[TaskSpec, AlgorithmConfig]:
        """Task and algorithm config, raising :class:`ConfigError` on any problem."""
        try:
            algorithm = Algorithm(self.algorithm)
        except ValueError:
            choices = ", ".join(a.value for a in Algorithm)
            raise ConfigError(f"unknown algorithm {self.algorithm!r}; choose from {choices}") from None
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.workers < 1:
            raise ConfigError("workers must be positive")
        task = self.load_task()
        try:
            cfg = AlgorithmConfig(
                algorithm,
                sampling_size=int(self.sampling_size),
                generations=int(self.generations),
                fixed_samples=int(self.fixed_samples),
                as_initial_samples=int(self.as_initial_samples),
                depth=int(self.depth),
                max_front_size=int(self.max_front_size),
                preference=self.preference(task),
                mutation=MutationConfig(**self.mutation),
                estimators=EstimatorConfig(**self.estimators),
            )
            cfg.validate(task)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from None
        return task, cfg

    def run_label(self, task: TaskSpec) -> str:
        return self.label or preference_label(self.algorithm, self.preference(task))

    def default_dir_name(self, task: TaskSpec) -> str:
        return f"{task.name}__{self.run_label(task)}__seed{self.seed}"


def _defining_config(cfg: RunConfig) -> dict:
    # everything that can change results; the worker count cannot
    out = cfg.to_dict()
    out.pop("workers")
    return out


def run_single(cfg: RunConfig, out_dir: Path | None = None) -> Path:
    """Execute one run and write its directory; returns the directory."""
    task, alg = cfg.resolve()
    out = Path(out_dir) if out_dir is not None else default_output_root() / cfg.default_dir_name(task)
    out.mkdir(parents=True, exist_ok=True)
    started = _now()
    result = run_experiment(task, alg, int(cfg.seed), workers=cfg.workers)
    pref = alg.preference
    save_archive(
        result.archive,
        out,
        {
            "task": task.name,
            "task_definition": task_to_dict(task),
            "algorithm": alg.algorithm.value,
            "label": cfg.run_label(task),
            "seed": int(cfg.seed),
            "preference": preference_to_dict(pref) if pref is not None else None,
            "config": _defining_config(cfg),
        },
    )
    save_trace(result.trace, out / TRACE_CSV)
    ledger = result.ledger.generations
    write_manifest(
        out,
        {
            "schema_version": SCHEMA_VERSION,
            "kind": "run",
            "code_version": __version__,
            "config": cfg.to_dict(),
            "config_hash": config_hash(_defining_config(cfg)),
            "started_at": started,
            "finished_at": _now(),
            "ledger": {
                "generations": len(ledger),
                "offspring_evals": sum(g.offspring_evals for g in ledger),
                "reevaluation_evals": sum(g.reevaluation_evals for g in ledger),
                "total_evals": result.ledger.cumulative,
            },
        },
    )
    return out


def project_run(run_dir: Path, pref: DeltaPreference, out_dir: Path) -> Path:
    """Project a Pareto run onto a single-elite archive under ``pref``."""
    archive, meta = read_run(run_dir)
    if not isinstance(archive, ParetoArchive):
        raise ConfigError(f"{run_dir} holds a {meta['kind']} archive; only Pareto archives can be projected")
    projected = project_pareto_archive(archive, pref)
    out = Path(out_dir)
    extra = {k: v for k, v in meta.items() if k not in ("schema_version", "kind", "grid", "rule", "max_front_size")}
    extra.update(
        preference=preference_to_dict(pref),
        label=preference_label(meta["algorithm"], pref),
        projected_from=str(Path(run_dir)),
    )
    save_archive(projected, out, extra)
    write_manifest(
        out,
        {
            "schema_version": SCHEMA_VERSION,
            "kind": "projection",
            "code_version": __version__,
            "source_manifest_hash": _source_hash(run_dir),
            "preference": preference_to_dict(pref),
            "created_at": _now(),
        },
    )
    return out


def _source_hash(run_dir: Path) -> str | None:
    path = Path(run_dir) / "manifest.json"
    if not path.exists():
        return None
    return config_hash(json.loads(path.read_text()).get("files", {}))


def read_run(run_dir: Path):
    run_dir = Path(run_dir)
    for name in (ARCHIVE_CSV, ARCHIVE_JSON):
        if not (run_dir / name).is_file():
            raise RunError(f"run {run_dir}: missing {name}")
    try:
        return load_archive(run_dir)
    except (KeyError, ValueError, json.JSONDecodeError) as exc:
        raise RunError(f"run {run_dir}: unreadable archive ({exc})") from None


# ---------------------------------------------------------------------------
# evaluation


METRIC_COLUMNS = (
    "task",
    "algorithm",
    "label",
    "seed",
    "run",
    "delta_f",
    "delta_r",
    "cells_per_dim",
    "reevaluations",
    "filled_cells",
    "coverage",
    "corrected_qd_score",
    "reproducibility_score",
    "average_reproducibility",
    "average_fitness",
    "weighted_regret",
)
CELL_COLUMNS = (
    "task",
    "algorithm",
    "label",
    "seed",
    "cell_x",
    "cell_y",
    "corrected_fitness",
    "reproducibility",
    "variance",
    "max_variance",
    "reproducibility_contribution",
)
SCORE_METRICS = (
    "corrected_qd_score",
    "reproducibility_score",
    "average_reproducibility",
    "average_fitness",
    "weighted_regret",
)


@dataclass
class EvaluatedRun:
    task: TaskSpec
    algorithm: str
    label: str
    seed: int
    run: str
    preference: DeltaPreference
    corrected: CorrectedArchive


def correct_archive(archive, task: TaskSpec, pref: DeltaPreference, seed: int, reevals: int, workers: int = 1):
    """Corrected archive of a final archive; Pareto archives are projected first."""
    if isinstance(archive, ParetoArchive):
        archive = project_pareto_archive(archive, pref)
    return corrected_archive(reevaluate_archive(archive, task, reevals, seed, workers))


def evaluate_runs(
    run_dirs: Sequence[Path], reevals: int = DEFAULT_REEVALUATIONS, workers: int = 1
) -> tuple[list[dict], list[dict]]:
    """Metric rows and per-cell rows for a comparison set of runs.

    Reproducibility-Score normalisers are pooled over all runs of the same
    task, so every run to be compared must be passed in one call.
    """
    evaluated = []
    for run_dir in run_dirs:
        archive, meta = read_run(run_dir)
        task = task_from_dict(meta["task_definition"]) if "task_definition" in meta else load_task(meta["task"])
        pref = preference_from_dict(meta.get("preference")) or task.default_preference
        ca = correct_archive(archive, task, pref, int(meta.get("seed", 0)), reevals, workers)
        evaluated.append(
            EvaluatedRun(task, meta.get("algorithm", ""), meta.get("label", meta.get("algorithm", "")),
                         int(meta.get("seed", 0)), Path(run_dir).name, pref, ca)
        )
    metric_rows, cell_rows = [], []
    by_task: dict[str, list[EvaluatedRun]] = {}
    for ev in evaluated:
        by_task.setdefault(ev.task.name, []).append(ev)
    for group in by_task.values():
        archives = [ev.corrected for ev in group]
        contributions = reproducibility_contributions(archives)
        max_var = cell_max_variances(archives)
        for ev, terms in zip(group, contributions):
            ca = ev.corrected
            report = metric_report(ca, ev.task, ev.preference, float(sum(terms.values())))
            metric_rows.append({
                "task": ev.task.name,
                "algorithm": ev.algorithm,
                "label": ev.label,
                "seed": ev.seed,
                "run": ev.run,
                "delta_f": ev.preference.delta_f,
                "delta_r": ev.preference.delta_r,
                "cells_per_dim": ";".join(str(n) for n in ca.grid.cells_per_dim),
                "reevaluations": reevals,
                **asdict(report),
            })
            for cell in sorted(ca.cells):
                i = ca.cells[cell]
                x, y = ca.grid.unravel(cell)[:2]
                cell_rows.append({
                    "task": ev.task.name,
                    "algorithm": ev.algorithm,
                    "label": ev.label,
                    "seed": ev.seed,
                    "cell_x": x,
                    "cell_y": y,
                    "corrected_fitness": ca.fitness[i],
                    "reproducibility": ca.reproducibility[i],
                    "variance": ca.variance[i],
                    "max_variance": max_var[cell],
                    "reproducibility_contribution": terms[cell],
                })
    return metric_rows, cell_rows


def write_evaluation(metric_rows: list[dict], cell_rows: list[dict], out_dir: Path) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "metrics.csv", METRIC_COLUMNS, ([r[c] for c in METRIC_COLUMNS] for r in metric_rows))
    write_csv(out / "cells.csv", CELL_COLUMNS, ([r[c] for c in CELL_COLUMNS] for r in cell_rows))
    return out / "metrics.csv", out / "cells.csv"


# ---------------------------------------------------------------------------
# reporting


PVALUE_COLUMNS = (
    "task",
    "metric",
    "label_a",
    "label_b",
    "n",
    "median_a",
    "median_b",
    "p_value",
    "p_holm",
    "status",
)


def _value(text: str) -> float | None:
    return None if text in ("", "nan") else float(text)


def pairwise_tests(metric_rows: list[dict]) -> list[dict]:
    """Paired signed-rank tests between all labels of a task, per metric.

    Pairs are matched by seed. Holm-Bonferroni runs over the tested pairs
    of one (task, metric) family; pairs with fewer than five matched seeds
    are listed as ``insufficient n`` and left out of the family.
    """
    out = []
    tasks = sorted({r["task"] for r in metric_rows})
    for task, metric in itertools.product(tasks, SCORE_METRICS):
        scores: dict[str, dict[str, float]] = {}
        for r in metric_rows:
            if r["task"] == task:
                v = _value(r[metric])
                if v is not None:
                    scores.setdefault(r["label"], {})[r["seed"]] = v
        family = []
        for a, b in itertools.combinations(sorted(scores), 2):
            seeds = sorted(set(scores[a]) & set(scores[b]), key=lambda s: int(s))
            xa = [scores[a][s] for s in seeds]
            xb = [scores[b][s] for s in seeds]
            row = {
                "task": task, "metric": metric, "label_a": a, "label_b": b, "n": len(seeds),
                "median_a": float(np.median(xa)) if xa else None,
                "median_b": float(np.median(xb)) if xb else None,
                "p_value": None, "p_holm": None, "status": "insufficient n",
            }
            if len(seeds) >= MIN_PAIRS:
                row["p_value"] = paired_rank_test(xa, xb)
                row["status"] = "ok"
                family.append(row)
            out.append(row)
        for row, adj in zip(family, holm_bonferroni([r["p_value"] for r in family])):
            row["p_holm"] = adj
    return out


def heatmap_matrices(cell_rows: list[dict], cells_per_dim: tuple[int, int]):
    """``{(task, label, seed): (fitness, reproducibility)}`` matrices, NaN where empty."""
    out = {}
    for r in cell_rows:
        key = (r["task"], r["label"], r["seed"])
        if key not in out:
            out[key] = (np.full(cells_per_dim, np.nan), np.full(cells_per_dim, np.nan))
        fit, rep = out[key]
        x, y = int(r["cell_x"]), int(r["cell_y"])
        fit[x, y] = float(r["corrected_fitness"])
        rep[x, y] = float(r["reproducibility"])
    return out


def _write_matrix(path: Path, matrix: np.ndarray):
    with open(path, "w") as fh:
        for row in matrix:
            fh.write(",".join("" if np.isnan(v) else fmt(v) for v in row) + "\n")


def _safe(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_.," else "_" for c in name)


def report(metrics_paths: Sequence[Path], out_dir: Path, cells_paths: Sequence[Path] = (), figures: bool = True) -> Path:
    """Plot data (long scores, heatmap matrices), p-value table and optional figures."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metric_rows = [row for p in metrics_paths for row in read_csv(Path(p))]
    if not cells_paths:
        cells_paths = [Path(p).with_name("cells.csv") for p in metrics_paths if Path(p).with_name("cells.csv").exists()]
    cell_rows = [row for p in cells_paths for row in read_csv(Path(p))]

    long_rows = [
        (r["task"], r["algorithm"], r["label"], r["seed"], metric, r[metric])
        for r in metric_rows
        for metric in SCORE_METRICS
    ]
    write_csv(out / "scores_long.csv", ("task", "algorithm", "label", "seed", "metric", "value"), long_rows)

    tests = pairwise_tests(metric_rows)
    write_csv(out / "pvalues.csv", PVALUE_COLUMNS, ([t[c] for c in PVALUE_COLUMNS] for t in tests))

    dims = {(r["task"], r["label"], r["seed"]): tuple(int(v) for v in r["cells_per_dim"].split(";")) for r in metric_rows}
    heat_dir = out / "heatmaps"
    heat_dir.mkdir(exist_ok=True)
    matrices = {}
    for key, shape in dims.items():
        rows = [r for r in cell_rows if (r["task"], r["label"], r["seed"]) == key]
        fit, rep = heatmap_matrices(rows, shape).get(key, (np.full(shape, np.nan), np.full(shape, np.nan)))
        stem = _safe(f"{key[0]}__{key[1]}__seed{key[2]}")
        _write_matrix(heat_dir / f"{stem}__fitness.csv", fit)
        _write_matrix(heat_dir / f"{stem}__reproducibility.csv", rep)
        matrices[key] = (fit, rep)

    if figures:
        try:
            from .plotting import render_figures

            render_figures(metric_rows, matrices, out / "figures")
        except ImportError:
            log.warning("matplotlib not installed; skipping figures (install the 'plots' extra)")
    return out


# ---------------------------------------------------------------------------
# campaigns


@dataclass
class CampaignConfig:
    tasks: list[str]
    algorithms: list[dict]
    seeds: list[int] = field(default_factory=lambda: list(DEFAULT_SEEDS))
    sampling_size: int = 4096
    generations: int = 250
    reevaluations: int = DEFAULT_REEVALUATIONS
    workers: int = 1
    out: str | None = None

    @classmethod
    def from_dict(cls, data: dict) -> "CampaignConfig":
        data = dict(data)
        _check_version(data, "campaign config")
        data.pop("schema_version", None)
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown campaign config keys: {', '.join(unknown)}")
        algorithms = [{"algorithm": a} if isinstance(a, str) else dict(a) for a in data.get("algorithms", [])]
        data["algorithms"] = algorithms
        cfg = cls(**data)
        if not cfg.tasks or not cfg.algorithms or not cfg.seeds:
            raise ConfigError("a campaign needs at least one task, algorithm and seed")
        return cfg

    def run_configs(self) -> list[RunConfig]:
        out = []
        for task, spec, seed in itertools.product(self.tasks, self.algorithms, self.seeds):
            params = {"sampling_size": self.sampling_size, "generations": self.generations, "workers": self.workers}
            params.update(spec)
            rc = RunConfig.from_dict(dict(params, task=task, seed=seed))
            rc.resolve()  # fail before any run starts
            out.append(rc)
        return out


def run_campaign(cfg: CampaignConfig, figures: bool = True) -> Path:
    """Run every (task, algorithm, seed), then evaluate and report them together.

    Run directories whose manifest already carries the same config hash are
    reused, so an interrupted campaign can be resumed.
    """
    root = Path(cfg.out) if cfg.out else default_output_root()
    run_dirs = []
    for rc in cfg.run_configs():
        task = rc.load_task()
        run_dir = root / "runs" / rc.default_dir_name(task)
        manifest = run_dir / "manifest.json"
        if manifest.exists() and json.loads(manifest.read_text()).get("config_hash") == config_hash(_defining_config(rc)):
            log.info("reusing %s", run_dir)
        else:
            log.info("running %s", run_dir.name)
            run_single(rc, run_dir)
        run_dirs.append(run_dir)
    metric_rows, cell_rows = evaluate_runs(run_dirs, cfg.reevaluations, cfg.workers)
    metrics_path, cells_path = write_evaluation(metric_rows, cell_rows, root / "evaluation")
    report([metrics_path], root / "report", [cells_path], figures=figures)
    return root
