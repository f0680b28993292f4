"""Grid archives over feature space and every archive-addition rule.

Three containers share one :class:`GridSpec`:

* :class:`GridArchive` with ``depth == 1`` -- classic single-elite cells;
* :class:`GridArchive` with ``depth > 1`` -- ordered occupant lists used by
  archive-sampling to buffer non-stationary estimates;
* :class:`ParetoArchive` -- a bounded Pareto front of
  ``(est_fitness, est_reproducibility)`` per cell.

Scalar-score rules (fitness only, reproducibility only, weighted sum) keep
cells sorted by score with incumbents winning ties. Comparator rules (ls,
delta) cannot be ranked, so depth cells are maintained by a cascade walk.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterator, Sequence

import numpy as np

from .core import DeltaPreference, SolutionRecord


@dataclass(frozen=True)
class GridSpec:
    feature_mins: tuple[float, ...]
    feature_maxs: tuple[float, ...]
    cells_per_dim: tuple[int, ...]
    depth: int = 1

    def __post_init__(self):
        object.__setattr__(self, "feature_mins", tuple(float(v) for v in self.feature_mins))
        object.__setattr__(self, "feature_maxs", tuple(float(v) for v in self.feature_maxs))
        object.__setattr__(self, "cells_per_dim", tuple(int(v) for v in self.cells_per_dim))
        d = len(self.cells_per_dim)
        if not (len(self.feature_mins) == len(self.feature_maxs) == d) or d == 0:
            raise ValueError("grid bounds and cells_per_dim must have one entry per feature")
        if any(lo >= hi for lo, hi in zip(self.feature_mins, self.feature_maxs)):
            raise ValueError("feature_mins must be strictly below feature_maxs")
        if any(n < 1 for n in self.cells_per_dim) or self.depth < 1:
            raise ValueError("cells_per_dim and depth must be positive")

    @property
    def num_features(self) -> int:
        return len(self.cells_per_dim)

    @property
    def num_cells(self) -> int:
        return math.prod(self.cells_per_dim)

    @property
    def capacity(self) -> int:
        return self.num_cells * self.depth

    def with_depth(self, depth: int) -> "GridSpec":
        return GridSpec(self.feature_mins, self.feature_maxs, self.cells_per_dim, depth)

    def index_arrays(self, features: np.ndarray) -> np.ndarray:
        """Per-dimension cell indices for ``(k, D)`` features -> ``(k, D)`` ints."""
        f = np.asarray(features, dtype=np.float64)
        lo = np.asarray(self.feature_mins)
        hi = np.asarray(self.feature_maxs)
        n = np.asarray(self.cells_per_dim)
        idx = np.floor((f - lo) / (hi - lo) * n)
        idx = np.where(np.isnan(idx), 0, idx)
        return np.clip(idx, 0, n - 1).astype(np.int64)

    def flat_indices(self, features: np.ndarray) -> np.ndarray:
        idx = self.index_arrays(np.atleast_2d(features))
        return np.ravel_multi_index(tuple(idx.T), self.cells_per_dim)

    def flat_index(self, features) -> int:
        """Scalar twin of :meth:`flat_indices`, cheaper for one vector."""
        key = 0
        for v, lo, hi, n in zip(features, self.feature_mins, self.feature_maxs, self.cells_per_dim):
            x = (float(v) - lo) / (hi - lo) * n
            if math.isnan(x):
                i = 0
            elif math.isinf(x):
                i = n - 1 if x > 0 else 0
            else:
                i = min(max(math.floor(x), 0), n - 1)
            key = key * n + i
        return key

    def unravel(self, flat: int) -> tuple[int, ...]:
        return tuple(int(v) for v in np.unravel_index(int(flat), self.cells_per_dim))

    def ravel(self, index: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(int(v) for v in index), self.cells_per_dim))


def cell_index(features, spec: GridSpec) -> tuple[int, ...]:
    """Cell of a feature vector; out-of-bounds features land in edge cells."""
    return tuple(int(v) for v in spec.index_arrays(np.asarray(features, dtype=np.float64)[None])[0])


# ---------------------------------------------------------------------------
# preference arithmetic


def weighted_fitness(f, r, pref: DeltaPreference):
    """Adjusted fitness ``f + (delta_f + rho) / (delta_r + rho) * r``."""
    return f + ((pref.delta_f + pref.rho) / (pref.delta_r + pref.rho)) * r


class Decision(Enum):
    REPLACE_ELITE = "replace"
    KEEP_ELITE = "keep"


def delta_replaces(f_i: float, r_i: float, f_e: float, r_e: float, delta_f: float, delta_r: float) -> bool:
    return (
        f_i >= f_e + delta_f
        or (f_i >= f_e and r_i >= r_e)
        or (f_i >= f_e - delta_f and r_i >= r_e + delta_r)
    )


def delta_compare(candidate: tuple[float, float], elite: tuple[float, float], pref: DeltaPreference) -> Decision:
    """Three-region replacement test of a candidate ``(f, r)`` against an elite."""
    f_i, r_i = candidate
    f_e, r_e = elite
    if delta_replaces(f_i, r_i, f_e, r_e, pref.delta_f, pref.delta_r):
        return Decision.REPLACE_ELITE
    return Decision.KEEP_ELITE


# ---------------------------------------------------------------------------
# addition rules


class RuleKind(str, Enum):
    FITNESS_ONLY = "fitness_only"
    REPRODUCIBILITY_ONLY = "reproducibility_only"
    LS = "ls"
    WEIGHTED = "weighted"
    DELTA = "delta"
    PARETO = "pareto"


_SCORED = (RuleKind.FITNESS_ONLY, RuleKind.REPRODUCIBILITY_ONLY, RuleKind.WEIGHTED)


@dataclass(frozen=True)
class AdditionRule:
    kind: RuleKind
    preference: DeltaPreference | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", RuleKind(self.kind))
        if self.kind in (RuleKind.WEIGHTED, RuleKind.DELTA) and self.preference is None:
            raise ValueError(f"{self.kind.value} rule needs a DeltaPreference")

    @classmethod
    def fitness_only(cls):
        return cls(RuleKind.FITNESS_ONLY)

    @classmethod
    def reproducibility_only(cls):
        return cls(RuleKind.REPRODUCIBILITY_ONLY)

    @classmethod
    def ls(cls):
        return cls(RuleKind.LS)

    @classmethod
    def weighted(cls, pref: DeltaPreference):
        return cls(RuleKind.WEIGHTED, pref)

    @classmethod
    def delta(cls, pref: DeltaPreference):
        return cls(RuleKind.DELTA, pref)

    @classmethod
    def pareto(cls):
        return cls(RuleKind.PARETO)

    @property
    def is_scored(self) -> bool:
        return self.kind in _SCORED

    def score(self, f, r):
        """Ranking score for scalar rules; works on floats and arrays."""
        if self.kind is RuleKind.FITNESS_ONLY:
            return f
        if self.kind is RuleKind.REPRODUCIBILITY_ONLY:
            return r
        if self.kind is RuleKind.WEIGHTED:
            return weighted_fitness(f, r, self.preference)
        raise TypeError(f"{self.kind.value} is not a scalar-score rule")

    def record_score(self, rec: SolutionRecord) -> float:
        return self.score(rec.est_fitness, rec.est_reproducibility)

    def beats(self, cand: SolutionRecord, elite: SolutionRecord) -> bool:
        """Does ``cand`` replace ``elite`` in a head-to-head comparison?"""
        if self.is_scored:
            return self.record_score(cand) > self.record_score(elite)
        if self.kind is RuleKind.LS:
            return cand.est_fitness >= elite.est_fitness and cand.est_reproducibility >= elite.est_reproducibility
        if self.kind is RuleKind.DELTA:
            p = self.preference
            return delta_replaces(
                cand.est_fitness, cand.est_reproducibility,
                elite.est_fitness, elite.est_reproducibility,
                p.delta_f, p.delta_r,
            )
        raise TypeError("pareto additions go through add_pareto")


class Status(str, Enum):
    ADDED = "added"
    REPLACED = "replaced"
    REJECTED = "rejected"


@dataclass(frozen=True)
class AdditionOutcome:
    status: Status
    evicted: tuple[SolutionRecord, ...] = ()

    @property
    def accepted(self) -> bool:
        return self.status is not Status.REJECTED


_ADDED = AdditionOutcome(Status.ADDED)
_REJECTED = AdditionOutcome(Status.REJECTED)


def _check_candidate(candidate: SolutionRecord):
    if candidate.sample_count < 1:
        raise ValueError("candidate has no evaluation samples")


# ---------------------------------------------------------------------------
# grid archive


class GridArchive:
    """Cells keyed by flat index, each an ordered occupant list (best first)."""

    def __init__(self, spec: GridSpec, rule: AdditionRule):
        if rule.kind is RuleKind.PARETO:
            raise ValueError("use ParetoArchive for pareto additions")
        self.spec = spec
        self.rule = rule
        self.cells: dict[int, list[SolutionRecord]] = {}

    @property
    def depth(self) -> int:
        return self.spec.depth

    def __len__(self) -> int:
        return sum(len(v) for v in self.cells.values())

    def __iter__(self) -> Iterator[SolutionRecord]:
        for key in sorted(self.cells):
            yield from self.cells[key]

    @property
    def num_filled(self) -> int:
        return len(self.cells)

    def occupants(self) -> list[SolutionRecord]:
        return list(self)

    def elites(self) -> list[tuple[int, SolutionRecord]]:
        """``(flat cell, top occupant)`` for every filled cell, sorted by cell."""
        return [(key, self.cells[key][0]) for key in sorted(self.cells)]

    def cell_of(self, rec: SolutionRecord) -> int:
        return self.spec.flat_index(rec.est_features)

    def add(self, candidate: SolutionRecord, cell: int | None = None) -> AdditionOutcome:
        """Add under the archive's rule; ``cell`` may pass a precomputed flat index."""
        if self.depth == 1:
            return add_single(self, candidate, cell)
        if self.rule.is_scored:
            return add_scored_depth(self, candidate, cell)
        return add_delta_depth(self, candidate, cell)

    def clear(self):
        self.cells = {}


def _scored_insert(occupants: list, candidate, depth: int, score: Callable) -> AdditionOutcome:
    s = score(candidate)
    pos = len(occupants)
    for j, occ in enumerate(occupants):
        if s > score(occ):
            pos = j
            break
    if pos >= depth:
        return _REJECTED
    occupants.insert(pos, candidate)
    if len(occupants) > depth:
        return AdditionOutcome(Status.REPLACED, (occupants.pop(),))
    return _ADDED


def cascade_insert(occupants: list, candidate, depth: int, beats: Callable) -> AdditionOutcome:
    """Insert by walking occupants from the most senior position.

    ``beats(a, b)`` says whether ``a`` replaces ``b``. The first occupant
    beaten by the walker is displaced and becomes the walker for the
    remaining, lower positions. A walker left over at the end is appended
    when the cell has room and evicted otherwise.
    """
    walker = candidate
    for j in range(len(occupants)):
        if beats(walker, occupants[j]):
            occupants[j], walker = walker, occupants[j]
    if walker is candidate:
        if len(occupants) >= depth:
            return _REJECTED
        occupants.append(candidate)
        return _ADDED
    if len(occupants) < depth:
        occupants.append(walker)
        return _ADDED
    return AdditionOutcome(Status.REPLACED, (walker,))


def _cell_list(archive: GridArchive, candidate: SolutionRecord, key: int | None) -> list:
    _check_candidate(candidate)
    if key is None:
        key = archive.cell_of(candidate)
    cell = archive.cells.get(key)
    if cell is None:
        cell = archive.cells[key] = []
    return cell


def add_single(archive: GridArchive, candidate: SolutionRecord, cell: int | None = None) -> AdditionOutcome:
    """Single-elite addition under any non-Pareto rule."""
    if archive.depth != 1:
        raise ValueError("add_single needs a depth-1 archive")
    cell = _cell_list(archive, candidate, cell)
    if not cell:
        cell.append(candidate)
        return _ADDED
    elite = cell[0]
    if archive.rule.beats(candidate, elite):
        cell[0] = candidate
        return AdditionOutcome(Status.REPLACED, (elite,))
    return _REJECTED


def add_scored_depth(archive: GridArchive, candidate: SolutionRecord, cell: int | None = None) -> AdditionOutcome:
    """Sorted insertion for scalar rules; the lowest-scored occupant overflows."""
    if not archive.rule.is_scored:
        raise ValueError("add_scored_depth needs a scalar-score rule")
    cell = _cell_list(archive, candidate, cell)
    return _scored_insert(cell, candidate, archive.depth, archive.rule.record_score)


def add_delta_depth(archive: GridArchive, candidate: SolutionRecord, cell: int | None = None) -> AdditionOutcome:
    """Cascade insertion for comparator rules (delta, ls)."""
    if archive.rule.is_scored:
        raise ValueError("add_delta_depth needs a comparator rule")
    cell = _cell_list(archive, candidate, cell)
    return cascade_insert(cell, candidate, archive.depth, archive.rule.beats)


# ---------------------------------------------------------------------------
# Pareto cells


def weakly_dominates(a: tuple[float, float], b: tuple[float, float]) -> bool:
    """``a`` is no worse than ``b`` on both objectives (equality included)."""
    return a[0] >= b[0] and a[1] >= b[1]


def dominates(a: tuple[float, float], b: tuple[float, float]) -> bool:
    return a[0] >= b[0] and a[1] >= b[1] and (a[0] > b[0] or a[1] > b[1])


def crowding_distances(points: np.ndarray) -> np.ndarray:
    """Crowding distance over each objective's range; boundary points get inf."""
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    dist = np.zeros(n)
    if n <= 2:
        dist[:] = np.inf
        return dist
    for m in range(pts.shape[1]):
        order = np.argsort(pts[:, m], kind="stable")
        vals = pts[order, m]
        span = vals[-1] - vals[0]
        dist[order[0]] = np.inf
        dist[order[-1]] = np.inf
        if span > 0:
            dist[order[1:-1]] += (vals[2:] - vals[:-2]) / span
    return dist


@dataclass
class ParetoCell:
    """Non-dominated occupants of one cell, kept in insertion order."""

    index: tuple[int, ...]
    max_front_size: int = 6
    front: list[SolutionRecord] = field(default_factory=list)
    _crowding: np.ndarray | None = field(default=None, repr=False)

    def __len__(self):
        return len(self.front)

    def objectives(self) -> np.ndarray:
        return np.array([rec.objectives for rec in self.front], dtype=np.float64).reshape(-1, 2)

    def crowding(self) -> np.ndarray:
        if self._crowding is None:
            self._crowding = crowding_distances(self.objectives())
        return self._crowding


def add_pareto(cell: ParetoCell, candidate: SolutionRecord) -> AdditionOutcome:
    """Front update: reject weakly dominated (incl. duplicate) candidates,
    drop members the candidate dominates, then trim by crowding distance."""
    _check_candidate(candidate)
    c = candidate.objectives
    for rec in cell.front:
        if weakly_dominates(rec.objectives, c):
            return _REJECTED
    kept = [rec for rec in cell.front if not dominates(c, rec.objectives)]
    removed = tuple(rec for rec in cell.front if dominates(c, rec.objectives))
    kept.append(candidate)
    cell.front = kept
    cell._crowding = None
    if len(kept) > cell.max_front_size:
        dist = cell.crowding()
        smallest = dist.min()
        # ties go to the most recently added member
        victim = int(np.flatnonzero(dist == smallest)[-1])
        evicted = kept.pop(victim)
        cell._crowding = None
        if evicted is candidate:
            return _REJECTED
        removed = removed + (evicted,)
    if removed:
        return AdditionOutcome(Status.REPLACED, removed)
    return _ADDED


class ParetoArchive:
    def __init__(self, spec: GridSpec, max_front_size: int = 6):
        if max_front_size < 1:
            raise ValueError("max_front_size must be positive")
        self.spec = spec
        self.max_front_size = max_front_size
        self.rule = AdditionRule.pareto()
        self.cells: dict[int, ParetoCell] = {}

    def __len__(self):
        return sum(len(c) for c in self.cells.values())

    def __iter__(self) -> Iterator[SolutionRecord]:
        for key in sorted(self.cells):
            yield from self.cells[key].front

    @property
    def num_filled(self) -> int:
        return len(self.cells)

    def occupants(self) -> list[SolutionRecord]:
        return list(self)

    def add(self, candidate: SolutionRecord, cell: int | None = None) -> AdditionOutcome:
        _check_candidate(candidate)
        key = self.spec.flat_index(candidate.est_features) if cell is None else cell
        cell = self.cells.get(key)
        if cell is None:
            cell = self.cells[key] = ParetoCell(self.spec.unravel(key), self.max_front_size)
        return add_pareto(cell, candidate)

    def clear(self):
        self.cells = {}


def project_pareto_archive(archive: ParetoArchive, pref: DeltaPreference) -> GridArchive:
    """Pick one member per front by maximal weighted fitness.

    Ties go to higher reproducibility, then to the earlier-inserted member.
    """
    out = GridArchive(archive.spec.with_depth(1), AdditionRule.weighted(pref))
    for key in sorted(archive.cells):
        front = archive.cells[key].front
        if not front:
            continue
        best = max(
            range(len(front)),
            key=lambda j: (
                weighted_fitness(front[j].est_fitness, front[j].est_reproducibility, pref),
                front[j].est_reproducibility,
                -j,
            ),
        )
        out.cells[key] = [front[best]]
    return out
