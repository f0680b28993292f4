"""Post-hoc evaluation of final archives.

Every retained solution is reevaluated (512 times by default) on streams
reserved for correction, so training draws never change. Its corrected
fitness and features are the medians of those samples, and solutions are
re-inserted into an empty grid at their corrected cells. Scores are computed
from that corrected archive only, never from training-time estimates.

The Reproducibility-Score normalises each cell by the largest descriptor
variance seen in that cell across a whole comparison set of runs, so it is
computed in two passes over all corrected archives together.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .archive import GridArchive, GridSpec, ParetoArchive, weighted_fitness
from .core import DeltaPreference, ReproducibilityEstimator, dispersion_batch, reproducibility_batch
from .rng import Role, generation_stream
from .stats import holm_bonferroni, paired_rank_test  # noqa: F401  (re-exported)
from .tasks import TaskSpec, evaluate_batch, optimum_value

DEFAULT_REEVALUATIONS = 512


def _best_of_cell(archive) -> list[tuple[int, object]]:
    if isinstance(archive, ParetoArchive):
        return [
            (key, max(cell.front, key=lambda r: r.est_fitness))
            for key, cell in sorted(archive.cells.items())
            if cell.front
        ]
    return archive.elites()


def training_summary(archive, task: TaskSpec) -> dict:
    """Training-time statistics from the cells' current estimates.

    Pareto cells are summarised by their highest-fitness member.
    """
    elites = [rec for _, rec in _best_of_cell(archive)]
    filled = len(elites)
    fit = np.array([r.est_fitness for r in elites])
    rep = np.array([r.est_reproducibility for r in elites])
    return {
        "occupancy": len(archive),
        "filled_cells": filled,
        "coverage": filled / archive.spec.num_cells,
        "training_qd_score": float((fit - task.fitness_offset).sum()) if filled else 0.0,
        "mean_fitness": float(fit.mean()) if filled else float("nan"),
        "max_fitness": float(fit.max()) if filled else float("nan"),
        "mean_reproducibility": float(rep.mean()) if filled else float("nan"),
    }


@dataclass
class ReevaluationData:
    """Reevaluation samples of the retained solutions.

    ``training_cells[i]`` is the flat cell solution ``i`` occupied in the
    evaluated archive; ``fitness`` is ``(k, n)`` and ``features`` ``(k, D, n)``.
    """

    grid: GridSpec
    genotypes: np.ndarray
    training_cells: np.ndarray
    fitness: np.ndarray
    features: np.ndarray

    def __len__(self):
        return len(self.genotypes)

    @property
    def num_samples(self) -> int:
        return self.fitness.shape[1]


def reevaluate_archive(
    archive: GridArchive,
    task: TaskSpec,
    n: int = DEFAULT_REEVALUATIONS,
    seed: int = 0,
    workers: int = 1,
) -> ReevaluationData:
    """``n`` fresh samples for the top occupant of every filled cell.

    Pareto archives must be projected to a single-elite grid first.
    """
    if isinstance(archive, ParetoArchive):
        raise TypeError("project the Pareto archive onto a single-elite grid before reevaluating")
    if n < 2:
        raise ValueError("reevaluation needs at least 2 samples per solution")
    elites = archive.elites()
    grid = archive.spec.with_depth(1)
    if not elites:
        g = task.genotype_dim
        return ReevaluationData(grid, np.empty((0, g)), np.empty(0, np.int64),
                                np.empty((0, n)), np.empty((0, task.feature_dim, n)))
    genotypes = np.stack([rec.genotype for _, rec in elites])
    stream = generation_stream(seed, Role.CORRECTION, 0)
    fitness, features = evaluate_batch(task, genotypes, n, stream, workers=workers)
    cells = np.array([key for key, _ in elites], dtype=np.int64)
    return ReevaluationData(grid, genotypes, cells, fitness, features)


@dataclass
class CorrectedArchive:
    """Median-corrected estimates for every reevaluated solution, plus the
    cell -> solution assignment after re-insertion into an empty grid."""

    grid: GridSpec
    fitness: np.ndarray  # (k,) median fitness
    features: np.ndarray  # (k, D) coordinate-wise median features
    reproducibility: np.ndarray  # (k,) negated RMS feature std
    sigma: np.ndarray  # (k,) RMS feature std
    variance: np.ndarray  # (k,) mean per-coordinate feature variance
    corrected_cells: np.ndarray  # (k,) flat cell of the corrected features
    cells: dict[int, int] = field(default_factory=dict)  # flat cell -> solution index

    @property
    def num_filled(self) -> int:
        return len(self.cells)

    def occupant_indices(self) -> np.ndarray:
        return np.array([self.cells[k] for k in sorted(self.cells)], dtype=np.int64)

    def cell_fitness(self) -> np.ndarray:
        return self.fitness[self.occupant_indices()]

    def cell_reproducibility(self) -> np.ndarray:
        return self.reproducibility[self.occupant_indices()]


def corrected_archive(data: ReevaluationData) -> CorrectedArchive:
    """Re-insert every solution at the cell of its median features.

    Collisions go to the higher corrected fitness, then the higher
    reproducibility, then the earlier solution.
    """
    k = len(data)
    fitness = np.median(data.fitness, axis=-1) if k else np.empty(0)
    features = np.median(data.features, axis=-1) if k else np.empty((0, data.grid.num_features))
    if k:
        disp = dispersion_batch(data.features, ReproducibilityEstimator.NEG_STD)
        variance = (disp * disp).mean(axis=-1)
        reproducibility = reproducibility_batch(data.features, ReproducibilityEstimator.NEG_STD)
        cells_of = data.grid.flat_indices(features)
    else:
        variance = reproducibility = np.empty(0)
        cells_of = np.empty(0, dtype=np.int64)
    ca = CorrectedArchive(data.grid, fitness, features, reproducibility, np.sqrt(variance), variance, cells_of)
    order = np.lexsort((np.arange(k), -reproducibility, -fitness))
    for i in order:
        ca.cells.setdefault(int(cells_of[i]), int(i))
    return ca


def corrected_qd_score(ca: CorrectedArchive, fitness_offset: float = 0.0) -> float:
    if not ca.cells:
        return 0.0
    return float(np.sum(ca.cell_fitness() - fitness_offset))


def cell_max_variances(archives: Sequence[CorrectedArchive]) -> dict[int, float]:
    """Largest descriptor variance per corrected cell over all runs."""
    max_var: dict[int, float] = {}
    for ca in archives:
        for cell, var in zip(ca.corrected_cells.tolist(), ca.variance.tolist()):
            max_var[cell] = max(max_var.get(cell, 0.0), var)
    return max_var


def reproducibility_contributions(archives: Sequence[CorrectedArchive]) -> list[dict[int, float]]:
    """Per-run, per-cell terms ``1 - variance / max variance of the cell``.

    Pass 1 pools every reevaluated solution of every run by corrected cell;
    pass 2 scores each run's occupied cells against those maxima.
    """
    if not archives:
        return []
    grid = archives[0].grid
    for ca in archives[1:]:
        if ca.grid != grid:
            raise ValueError("Reproducibility-Score needs every run on the same grid")
    max_var = cell_max_variances(archives)
    out = []
    for ca in archives:
        terms = {}
        for cell, i in ca.cells.items():
            top = max_var[cell]
            terms[cell] = 1.0 if top == 0 else 1.0 - float(ca.variance[i]) / top
        out.append(terms)
    return out


def reproducibility_score(archives: Sequence[CorrectedArchive]) -> list[float]:
    return [float(sum(t.values())) for t in reproducibility_contributions(archives)]


def average_reproducibility(ca: CorrectedArchive, task: TaskSpec) -> float | None:
    """Mean of ``1 - sigma / sigma_max`` over the reevaluated solutions, clamped to [0, 1]."""
    if len(ca.sigma) == 0:
        return None
    sigma_max = task.sigma_max
    if sigma_max == 0:
        return 1.0
    return float(np.mean(np.clip(1.0 - ca.sigma / sigma_max, 0.0, 1.0)))


def average_fitness(ca: CorrectedArchive) -> float | None:
    if not ca.cells:
        return None
    return float(np.mean(ca.cell_fitness()))


def cell_regrets(ca: CorrectedArchive, task: TaskSpec, pref: DeltaPreference) -> np.ndarray:
    """Shortfall of each filled cell against the best weighted fitness the
    profile allows; clipping near the box edges can push a cell slightly
    above the analytic optimum, which counts as zero regret."""
    best = optimum_value(task, pref)
    achieved = weighted_fitness(ca.cell_fitness(), ca.cell_reproducibility(), pref)
    return np.maximum(0.0, best - achieved)


def weighted_regret(ca: CorrectedArchive, task: TaskSpec, pref: DeltaPreference) -> float | None:
    if not ca.cells:
        return None
    return float(np.mean(cell_regrets(ca, task, pref)))


@dataclass
class MetricReport:
    corrected_qd_score: float
    reproducibility_score: float
    average_reproducibility: float | None
    average_fitness: float | None
    coverage: float
    weighted_regret: float | None
    filled_cells: int


def metric_report(
    ca: CorrectedArchive, task: TaskSpec, pref: DeltaPreference, reproducibility_score_value: float
) -> MetricReport:
    return MetricReport(
        corrected_qd_score=corrected_qd_score(ca, task.fitness_offset),
        reproducibility_score=reproducibility_score_value,
        average_reproducibility=average_reproducibility(ca, task),
        average_fitness=average_fitness(ca),
        coverage=ca.num_filled / ca.grid.num_cells,
        weighted_regret=weighted_regret(ca, task, pref),
        filled_cells=ca.num_filled,
    )
