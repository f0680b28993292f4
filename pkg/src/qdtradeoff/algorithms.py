"""Generation loops for the ten MAP-Elites variants.

Fixed-sampling algorithms evaluate every offspring ``fixed_samples`` times
(Vanilla-ME is the one-sample case). Archive-sampling (AS) algorithms give
each offspring a couple of evaluations, and at the start of every generation
reevaluate every archive occupant once and re-settle the whole archive.

Every random quantity is drawn from a counter-based stream keyed by
``(seed, role, generation)``; evaluation noise is further addressed by
offspring and sample index. Archive writes happen in offspring-index order
in a single thread, so results do not depend on the number of evaluation
workers.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable

import numpy as np

from .archive import (
    AdditionRule,
    GridArchive,
    ParetoArchive,
    RuleKind,
)
from .core import (
    DEFAULT_ESTIMATORS,
    DeltaPreference,
    EstimatorConfig,
    SolutionRecord,
    estimate_batch,
)
from .metrics import training_summary
from .rng import Role, RngStream, generation_stream
from .tasks import TaskSpec, evaluate_batch, sample_genotypes

log = logging.getLogger(__name__)


class Algorithm(str, Enum):
    VANILLA_ME = "vanilla_me"
    ME_SAMPLING = "me_sampling"
    ME_SAMPLING_REPRODUCIBILITY = "me_sampling_reproducibility"
    ME_LS = "me_ls"
    ME_WEIGHTED = "me_weighted"
    ME_DELTA = "me_delta"
    VANILLA_AS = "vanilla_as"
    AS_WEIGHTED = "as_weighted"
    AS_DELTA = "as_delta"
    MOME_X = "mome_x"


ADAPTIVE = frozenset({Algorithm.VANILLA_AS, Algorithm.AS_WEIGHTED, Algorithm.AS_DELTA})
NEEDS_PREFERENCE = frozenset({Algorithm.ME_WEIGHTED, Algorithm.ME_DELTA, Algorithm.AS_WEIGHTED, Algorithm.AS_DELTA})
USES_PREFERENCE = NEEDS_PREFERENCE | {Algorithm.MOME_X}


@dataclass(frozen=True)
class MutationConfig:
    operator: str = "iso_line"
    # scaled for the desk budget: smaller steps stall fixed-sampling and
    # Pareto variants short of the optimum within 250 generations
    sigma_iso: float = 0.1
    sigma_line: float = 0.2

    def __post_init__(self):
        if self.operator not in ("iso_line", "gaussian"):
            raise ValueError(f"unknown mutation operator {self.operator!r}")
        if self.sigma_iso < 0 or self.sigma_line < 0:
            raise ValueError("mutation scales must be non-negative")


@dataclass(frozen=True)
class AlgorithmConfig:
    algorithm: Algorithm
    sampling_size: int = 4096
    generations: int = 250
    fixed_samples: int = 32
    as_initial_samples: int = 2
    depth: int = 3
    max_front_size: int = 6
    preference: DeltaPreference | None = None
    mutation: MutationConfig = field(default_factory=MutationConfig)
    estimators: EstimatorConfig = DEFAULT_ESTIMATORS

    def __post_init__(self):
        object.__setattr__(self, "algorithm", Algorithm(self.algorithm))
        for name in ("sampling_size", "fixed_samples", "as_initial_samples", "depth", "max_front_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.generations < 0:
            raise ValueError("generations must be non-negative")
        if self.algorithm in NEEDS_PREFERENCE and self.preference is None:
            raise ValueError(f"{self.algorithm.value} needs a preference (delta_f, delta_r)")

    @classmethod
    def for_task(cls, task: TaskSpec, algorithm, **overrides) -> "AlgorithmConfig":
        """Config with the task's default preference filled in where used."""
        algorithm = Algorithm(algorithm)
        if overrides.get("preference") is None and algorithm in USES_PREFERENCE:
            overrides["preference"] = task.default_preference
        return cls(algorithm, **overrides)

    @property
    def adaptive(self) -> bool:
        return self.algorithm in ADAPTIVE

    @property
    def samples_per_offspring(self) -> int:
        if self.algorithm is Algorithm.VANILLA_ME:
            return 1
        if self.adaptive:
            return self.as_initial_samples
        return self.fixed_samples

    @property
    def rule(self) -> AdditionRule:
        a = self.algorithm
        if a in (Algorithm.VANILLA_ME, Algorithm.ME_SAMPLING, Algorithm.VANILLA_AS):
            return AdditionRule.fitness_only()
        if a is Algorithm.ME_SAMPLING_REPRODUCIBILITY:
            return AdditionRule.reproducibility_only()
        if a is Algorithm.ME_LS:
            return AdditionRule.ls()
        if a in (Algorithm.ME_WEIGHTED, Algorithm.AS_WEIGHTED):
            return AdditionRule.weighted(self.preference)
        if a in (Algorithm.ME_DELTA, Algorithm.AS_DELTA):
            return AdditionRule.delta(self.preference)
        return AdditionRule.pareto()

    def new_archive(self, task: TaskSpec):
        if self.algorithm is Algorithm.MOME_X:
            return ParetoArchive(task.grid.with_depth(1), self.max_front_size)
        depth = self.depth if self.adaptive else 1
        return GridArchive(task.grid.with_depth(depth), self.rule)

    def validate(self, task: TaskSpec) -> "AlgorithmConfig":
        if self.sampling_size < self.samples_per_offspring:
            raise ValueError("sampling_size must cover at least one offspring")
        if self.adaptive:
            capacity = task.grid.num_cells * self.depth
            if self.sampling_size < capacity + self.as_initial_samples:
                raise ValueError(
                    f"sampling_size {self.sampling_size} leaves no offspring budget once an archive "
                    f"of capacity {capacity} is reevaluated"
                )
        return self


@dataclass
class GenerationBudget:
    generation: int
    offspring: int
    offspring_evals: int
    reevaluation_evals: int

    @property
    def total(self) -> int:
        return self.offspring_evals + self.reevaluation_evals


@dataclass
class BudgetLedger:
    generations: list[GenerationBudget] = field(default_factory=list)

    def record(self, generation: int, offspring: int, offspring_evals: int, reevaluation_evals: int, limit: int):
        entry = GenerationBudget(generation, offspring, offspring_evals, reevaluation_evals)
        if entry.total > limit:
            raise RuntimeError(f"generation {generation} spent {entry.total} evaluations, budget is {limit}")
        self.generations.append(entry)
        return entry

    @property
    def cumulative(self) -> int:
        return sum(g.total for g in self.generations)


@dataclass
class RunState:
    archive: GridArchive | ParetoArchive
    generation: int = 0
    ledger: BudgetLedger = field(default_factory=BudgetLedger)
    trace: list[dict] = field(default_factory=list)


# ---------------------------------------------------------------------------
# variation


def mutate_batch(parents: np.ndarray, second: np.ndarray, cfg: MutationConfig, z: np.ndarray, bounds=(0.0, 1.0)):
    """Vectorized variation; ``z`` holds ``G + 1`` standard normals per row."""
    g = parents.shape[1]
    child = parents + cfg.sigma_iso * z[:, :g]
    if cfg.operator == "iso_line":
        child = child + cfg.sigma_line * z[:, g:g + 1] * (second - parents)
    return np.clip(child, bounds[0], bounds[1])


def mutate(parent, cfg: MutationConfig, second_parent, rng: RngStream, index: int = 0, bounds=(0.0, 1.0)):
    """Mutate one parent with draws ``index * (G + 1) ...`` of ``rng``."""
    p = np.asarray(parent, dtype=np.float64)[None]
    q = np.asarray(second_parent, dtype=np.float64)[None]
    z = rng.normal_block((1, p.shape[1] + 1), start=index * (p.shape[1] + 1))
    return mutate_batch(p, q, cfg, z, bounds)[0]


# ---------------------------------------------------------------------------
# selection


def _capped_crowding_weights(dist: np.ndarray) -> np.ndarray:
    finite = dist[np.isfinite(dist)]
    if len(finite) == 0:
        return np.ones(len(dist))
    cap = 2.0 * float(np.median(finite))
    if cap <= 0:
        return np.ones(len(dist))
    return np.where(np.isfinite(dist), np.minimum(dist, cap), cap)


def select_parents(archive, count: int, rng: RngStream, task: TaskSpec | None = None) -> np.ndarray:
    """``count`` parent genotypes as a ``(count, G)`` array.

    Grid archives: uniform over every occupant of every cell. Pareto
    archives: uniform over filled cells, then proportional to capped
    crowding distance inside the cell. An empty archive falls back to the
    task's uniform initial sampler.
    """
    if len(archive) == 0:
        if task is None:
            raise ValueError("empty archive and no task to sample initial genotypes from")
        return sample_genotypes(task, rng, count)
    u = rng.uniform_block((count, 2))
    if isinstance(archive, ParetoArchive):
        keys = sorted(archive.cells)
        cells = [archive.cells[k] for k in keys]
        pick_cell = np.minimum((u[:, 0] * len(cells)).astype(np.int64), len(cells) - 1)
        out = np.empty((count, len(cells[0].front[0].genotype)))
        cdfs = {}
        for i, c in enumerate(pick_cell):
            cell = cells[c]
            if c not in cdfs:
                w = _capped_crowding_weights(cell.crowding())
                cdfs[c] = np.cumsum(w) / w.sum()
            j = min(int(np.searchsorted(cdfs[c], u[i, 1], side="right")), len(cell.front) - 1)
            out[i] = cell.front[j].genotype
        return out
    genotypes = np.array([rec.genotype for rec in archive])
    pick = np.minimum((u[:, 0] * len(genotypes)).astype(np.int64), len(genotypes) - 1)
    return genotypes[pick]


# ---------------------------------------------------------------------------
# offspring


def _breed(state: RunState, task: TaskSpec, cfg: AlgorithmConfig, seed: int, count: int) -> np.ndarray:
    g = state.generation
    sel = generation_stream(seed, Role.SELECTION, g)
    parents = select_parents(state.archive, count, sel.child(0), task)
    second = select_parents(state.archive, count, sel.child(1), task)
    z = generation_stream(seed, Role.MUTATION, g).normal_block((count, task.genotype_dim + 1))
    return mutate_batch(parents, second, cfg.mutation, z, task.genotype_bounds)


def record_scores(rule: AdditionRule, records: list[SolutionRecord]) -> np.ndarray:
    f = np.fromiter((r.est_fitness for r in records), np.float64, len(records))
    r = np.fromiter((r.est_reproducibility for r in records), np.float64, len(records))
    return np.asarray(rule.score(f, r), dtype=np.float64)


def merge_scored(archive: GridArchive, cells: np.ndarray, scores: np.ndarray, build: Callable[[int], SolutionRecord]):
    """Batch form of sequential scored additions, candidates in index order.

    Sorted insertion with overflow eviction keeps, per cell, the ``depth``
    best entries ranked by score and then by arrival (incumbents first,
    since a newcomer is placed behind equal scores). ``build(i)`` creates
    the record of candidate ``i`` and is only called for survivors.
    """
    cells = np.asarray(cells, np.int64)
    touched = np.unique(cells).tolist()
    incumbents = [(key, rec) for key in touched if key in archive.cells for rec in archive.cells[key]]
    m, k = len(incumbents), len(cells)
    all_cells = np.concatenate([np.fromiter((key for key, _ in incumbents), np.int64, m), cells])
    all_scores = np.concatenate([record_scores(archive.rule, [rec for _, rec in incumbents]), np.asarray(scores, np.float64)])
    order = np.lexsort((np.arange(m + k), -all_scores, all_cells))
    sorted_cells = all_cells[order]
    starts = np.flatnonzero(np.r_[True, sorted_cells[1:] != sorted_cells[:-1]])
    rank = np.arange(m + k) - np.repeat(starts, np.diff(np.r_[starts, m + k]))
    kept: dict[int, list[SolutionRecord]] = {}
    for i in order[rank < archive.depth].tolist():
        rec = incumbents[i][1] if i < m else build(i - m)
        kept.setdefault(int(all_cells[i]), []).append(rec)
    archive.cells.update(kept)


def insert_offspring(archive, genotypes, fit, feat, est):
    """Add a batch of evaluated offspring in index order."""
    est_f, est_d, est_r = est
    cells = archive.spec.flat_indices(est_d)
    if isinstance(archive, GridArchive) and archive.rule.is_scored:
        merge_scored(
            archive, cells, np.asarray(archive.rule.score(est_f, est_r), np.float64),
            lambda i: SolutionRecord(genotypes[i], fit[i], feat[i], est_f[i], est_d[i], est_r[i]),
        )
        return
    for i, key in enumerate(cells.tolist()):
        archive.add(SolutionRecord(genotypes[i], fit[i], feat[i], est_f[i], est_d[i], est_r[i]), key)


def _evaluate_offspring(state, task, cfg, seed, count, n_samples, workers):
    children = _breed(state, task, cfg, seed, count)
    stream = generation_stream(seed, Role.EVALUATION, state.generation)
    fit, feat = evaluate_batch(task, children, n_samples, stream, workers=workers)
    return children, fit, feat, estimate_batch(fit, feat, cfg.estimators)


# ---------------------------------------------------------------------------
# generations


def run_generation_fixed(state: RunState, task: TaskSpec, cfg: AlgorithmConfig, seed: int, workers: int = 1) -> RunState:
    if cfg.adaptive:
        raise ValueError(f"{cfg.algorithm.value} is an archive-sampling algorithm")
    n = cfg.samples_per_offspring
    count = cfg.sampling_size // n
    children, fit, feat, est = _evaluate_offspring(state, task, cfg, seed, count, n, workers)
    insert_offspring(state.archive, children, fit, feat, est)
    state.ledger.record(state.generation, count, count * n, 0, cfg.sampling_size)
    state.generation += 1
    return state


def _refresh(records: list[SolutionRecord], fit: np.ndarray, feat: np.ndarray, cfg: EstimatorConfig):
    m = len(records)
    if any(rec.fitness_samples is None for rec in records):
        raise ValueError("cannot reevaluate a record without sample history")
    out: list = [None] * m
    est_f = np.empty(m)
    est_d = np.empty((m, feat.shape[1]))
    est_r = np.empty(m)
    counts = np.fromiter((rec.sample_count for rec in records), np.int64, m)
    order = np.argsort(counts, kind="stable")
    for idx in np.split(order, np.flatnonzero(np.diff(counts[order])) + 1):
        rows = idx.tolist()
        f = np.concatenate([np.array([records[i].fitness_samples for i in rows]), fit[idx]], axis=1)
        d = np.concatenate([np.array([records[i].feature_samples for i in rows]), feat[idx]], axis=2)
        gf, gd, gr = estimate_batch(f, d, cfg)
        est_f[idx], est_d[idx], est_r[idx] = gf, gd, gr
        for j, i in enumerate(rows):
            out[i] = SolutionRecord(records[i].genotype, f[j], d[j], gf[j], gd[j], gr[j])
    return out, est_f, est_d, est_r


def refresh_records(records: list[SolutionRecord], fit: np.ndarray, feat: np.ndarray, cfg: EstimatorConfig):
    """Append one sample per record and recompute estimates.

    Records are grouped by sample count so the estimators run on stacked
    arrays; the stacked estimates are bit-identical to per-record ones.
    """
    return _refresh(records, fit, feat, cfg)[0]


def _resettle_order(archive: GridArchive, occupants: list[SolutionRecord]) -> np.ndarray:
    """Senior occupants first: by previous score for scalar rules, by
    cascade position (then cell) for comparator rules."""
    if archive.rule.is_scored:
        return np.lexsort((np.arange(len(occupants)), -record_scores(archive.rule, occupants)))
    position = [j for key in sorted(archive.cells) for j in range(len(archive.cells[key]))]
    return np.lexsort((np.arange(len(occupants)), np.asarray(position)))


def resettle(archive: GridArchive, occupants: list[SolutionRecord], refreshed, est_f, est_d, est_r):
    """Empty the archive and re-add refreshed occupants, senior first."""
    order = _resettle_order(archive, occupants)
    cells = archive.spec.flat_indices(est_d[order])
    archive.clear()
    if archive.rule.is_scored:
        scores = np.asarray(archive.rule.score(est_f[order], est_r[order]), np.float64)
        merge_scored(archive, cells, scores, lambda i: refreshed[order[i]])
    else:
        for i, key in zip(order.tolist(), cells.tolist()):
            archive.add(refreshed[i], key)


def run_generation_as(state: RunState, task: TaskSpec, cfg: AlgorithmConfig, seed: int, workers: int = 1) -> RunState:
    if not cfg.adaptive:
        raise ValueError(f"{cfg.algorithm.value} is not an archive-sampling algorithm")
    archive = state.archive
    occupants = archive.occupants()
    m = len(occupants)
    if m:
        genotypes = np.array([r.genotype for r in occupants])
        stream = generation_stream(seed, Role.REEVALUATION, state.generation)
        fit, feat = evaluate_batch(task, genotypes, 1, stream, workers=workers)
        resettle(archive, occupants, *_refresh(occupants, fit, feat, cfg.estimators))
    k = cfg.as_initial_samples
    count = max(cfg.sampling_size - m, 0) // k
    if count:
        children, fit, feat, est = _evaluate_offspring(state, task, cfg, seed, count, k, workers)
        insert_offspring(archive, children, fit, feat, est)
    state.ledger.record(state.generation, count, count * k, m, cfg.sampling_size)
    state.generation += 1
    return state


def run_generation(state: RunState, task: TaskSpec, cfg: AlgorithmConfig, seed: int, workers: int = 1) -> RunState:
    if cfg.adaptive:
        return run_generation_as(state, task, cfg, seed, workers)
    return run_generation_fixed(state, task, cfg, seed, workers)


@dataclass
class ExperimentResult:
    task: TaskSpec
    config: AlgorithmConfig
    seed: int
    archive: GridArchive | ParetoArchive
    ledger: BudgetLedger
    trace: list[dict]


def run_experiment(
    task: TaskSpec,
    cfg: AlgorithmConfig,
    seed: int,
    workers: int = 1,
    callback: Callable[[RunState], None] | None = None,
) -> ExperimentResult:
    """Run ``cfg.generations`` generations from an empty archive."""
    cfg.validate(task)
    state = RunState(cfg.new_archive(task))
    for _ in range(cfg.generations):
        run_generation(state, task, cfg, seed, workers)
        budget = state.ledger.generations[-1]
        row = {
            "generation": budget.generation,
            "offspring": budget.offspring,
            "offspring_evals": budget.offspring_evals,
            "reevaluation_evals": budget.reevaluation_evals,
            "cumulative_evals": state.ledger.cumulative,
        }
        row.update(training_summary(state.archive, task))
        state.trace.append(row)
        if callback is not None:
            callback(state)
    log.debug("%s on %s seed %d: %d evaluations", cfg.algorithm.value, task.name, seed, state.ledger.cumulative)
    return ExperimentResult(task, cfg, seed, state.archive, state.ledger, state.trace)


def with_overrides(cfg: AlgorithmConfig, **kw) -> AlgorithmConfig:
    return replace(cfg, **kw)
