"""On-disk formats for archives, traces and manifests.

Archive files are a CSV of occupants plus a JSON sidecar describing the
grid, rule and provenance. Floats are written with 17 significant digits so
a reload reproduces every estimate bit for bit; sample histories are not
stored (post-hoc evaluation resamples from genotypes).
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .archive import AdditionRule, GridArchive, GridSpec, ParetoArchive, ParetoCell, RuleKind
from .core import DeltaPreference, SolutionRecord

SCHEMA_VERSION = 1
ARCHIVE_CSV = "archive.csv"
ARCHIVE_JSON = "archive.json"
TRACE_CSV = "trace.csv"
MANIFEST_JSON = "manifest.json"

ARCHIVE_COLUMNS = (
    "cell_index",
    "slot",
    "genotype",
    "sample_count",
    "est_fitness",
    "est_features",
    "est_reproducibility",
)
TRACE_COLUMNS = (
    "generation",
    "offspring",
    "offspring_evals",
    "reevaluation_evals",
    "cumulative_evals",
    "occupancy",
    "filled_cells",
    "coverage",
    "training_qd_score",
    "mean_fitness",
    "max_fitness",
    "mean_reproducibility",
)


def fmt(x) -> str:
    """17-significant-digit decimal; integers stay integers, None is empty."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    return format(x, ".17g")


def fmt_vector(values) -> str:
    return ";".join(fmt(v) for v in values)


def parse_vector(text: str) -> np.ndarray:
    return np.array([float(v) for v in text.split(";")], dtype=np.float64)


def parse_optional(text: str) -> float | None:
    return None if text == "" else float(text)


def write_csv(path: Path, columns: Sequence[str], rows: Iterable[Sequence]):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([v if isinstance(v, str) else fmt(v) for v in row])


def read_csv(path: Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_json(path: Path, data) -> None:
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# archives


def rule_to_dict(rule: AdditionRule) -> dict:
    out = {"kind": rule.kind.value}
    if rule.preference is not None:
        out.update(preference_to_dict(rule.preference))
    return out


def preference_to_dict(pref: DeltaPreference) -> dict:
    return {"delta_f": pref.delta_f, "delta_r": pref.delta_r, "rho": pref.rho}


def preference_from_dict(data: dict | None) -> DeltaPreference | None:
    if not data:
        return None
    return DeltaPreference(float(data["delta_f"]), float(data["delta_r"]), float(data.get("rho", 1e-6)))


def grid_to_dict(grid: GridSpec) -> dict:
    return {
        "feature_mins": list(grid.feature_mins),
        "feature_maxs": list(grid.feature_maxs),
        "cells_per_dim": list(grid.cells_per_dim),
        "depth": grid.depth,
    }


def grid_from_dict(data: dict) -> GridSpec:
    return GridSpec(data["feature_mins"], data["feature_maxs"], data["cells_per_dim"], data.get("depth", 1))


def _archive_rows(archive):
    if isinstance(archive, ParetoArchive):
        cells = ((key, archive.cells[key].front) for key in sorted(archive.cells))
    else:
        cells = ((key, archive.cells[key]) for key in sorted(archive.cells))
    for key, occupants in cells:
        index = ";".join(str(i) for i in archive.spec.unravel(key))
        for slot, rec in enumerate(occupants):
            yield (
                index,
                slot,
                fmt_vector(rec.genotype),
                rec.sample_count,
                rec.est_fitness,
                fmt_vector(rec.est_features),
                rec.est_reproducibility,
            )


def save_archive(archive, directory: Path, metadata: dict) -> None:
    """Write ``archive.csv`` and ``archive.json`` into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_csv(directory / ARCHIVE_CSV, ARCHIVE_COLUMNS, _archive_rows(archive))
    sidecar = {
        "schema_version": SCHEMA_VERSION,
        "kind": "pareto" if isinstance(archive, ParetoArchive) else "grid",
        "grid": grid_to_dict(archive.spec),
        "rule": rule_to_dict(archive.rule),
    }
    if isinstance(archive, ParetoArchive):
        sidecar["max_front_size"] = archive.max_front_size
    sidecar.update(metadata)
    write_json(directory / ARCHIVE_JSON, sidecar)


def load_archive(directory: Path):
    """Read an archive written by :func:`save_archive`; returns ``(archive, sidecar)``."""
    directory = Path(directory)
    sidecar = json.loads((directory / ARCHIVE_JSON).read_text())
    grid = grid_from_dict(sidecar["grid"])
    rule_data = sidecar["rule"]
    if sidecar["kind"] == "pareto":
        archive = ParetoArchive(grid, int(sidecar.get("max_front_size", 6)))
    else:
        rule = AdditionRule(RuleKind(rule_data["kind"]), preference_from_dict(rule_data if "delta_f" in rule_data else None))
        archive = GridArchive(grid, rule)
    for row in read_csv(directory / ARCHIVE_CSV):
        key = grid.ravel(int(v) for v in row["cell_index"].split(";"))
        rec = SolutionRecord(
            parse_vector(row["genotype"]),
            None,
            None,
            float(row["est_fitness"]),
            parse_vector(row["est_features"]),
            float(row["est_reproducibility"]),
            sample_count=int(row["sample_count"]),
        )
        if isinstance(archive, ParetoArchive):
            cell = archive.cells.get(key)
            if cell is None:
                cell = archive.cells[key] = ParetoCell(grid.unravel(key), archive.max_front_size)
            cell.front.append(rec)
        else:
            archive.cells.setdefault(key, []).append(rec)
    return archive, sidecar


# ---------------------------------------------------------------------------
# traces and manifests


def save_trace(trace: list[dict], path: Path) -> None:
    write_csv(path, TRACE_COLUMNS, ([row[c] for c in TRACE_COLUMNS] for row in trace))


def file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def config_hash(config: dict) -> str:
    """Digest of a config that does not depend on key order."""
    return hashlib.sha256(json.dumps(config, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def write_manifest(directory: Path, payload: dict) -> dict:
    """Write ``manifest.json`` listing every other file with its sha256."""
    directory = Path(directory)
    files = {
        p.relative_to(directory).as_posix(): file_digest(p)
        for p in sorted(directory.rglob("*"))
        if p.is_file() and p.name != MANIFEST_JSON
    }
    manifest = dict(payload, files=files)
    write_json(directory / MANIFEST_JSON, manifest)
    return manifest
