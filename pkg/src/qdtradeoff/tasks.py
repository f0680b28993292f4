"""Direct Mapping benchmark tasks with performance-reproducibility profiles.

A genotype ``(g_f, g_d1, g_d2)`` in ``[0, 1]^3`` maps straight to a fitness
``g_f`` and expected features ``(g_d1, g_d2)``. Each evaluation perturbs the
features with isotropic Gaussian noise whose standard deviation is
``sigma(g_f)``, the task's profile, and clips them to the unit square.
Reproducibility-maximisation tasks give every genotype fitness 0 and keep
the fitness coordinate only as the noise control.

Task definitions live as JSON files in ``task_defs/``.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy.special import ndtri

from .archive import GridSpec, weighted_fitness
from .core import DeltaPreference, EvaluationSample, ReproducibilityEstimator
from .rng import RngStream, normals

BAND_TOLERANCE = 0.02
SCAN_POINTS = 10_001  # 1e-4 spacing, so breakpoints such as 0.9 are hit exactly


class ProfileKind(str, Enum):
    LINEAR = "linear"
    DECEPTIVE = "deceptive"
    AVOIDABLE_PEAK = "avoidable_peak"
    UNAVOIDABLE_PEAK = "unavoidable_peak"
    REPROD_GRADIENT = "reprod_gradient"
    REPROD_RUGGED = "reprod_rugged"


_REQUIRED = {
    ProfileKind.LINEAR: ("sigma_max",),
    ProfileKind.DECEPTIVE: ("sigma_max",),
    ProfileKind.AVOIDABLE_PEAK: ("sigma_base", "step_at", "peak_drop", "peak_gain"),
    ProfileKind.UNAVOIDABLE_PEAK: ("sigma_base", "step_at", "peak_drop", "peak_gain"),
    ProfileKind.REPROD_GRADIENT: ("sigma_max",),
    ProfileKind.REPROD_RUGGED: ("sigma_max", "cycles", "tilt"),
}


@dataclass(frozen=True)
class ProfileSpec:
    kind: ProfileKind
    parameters: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "kind", ProfileKind(self.kind))
        missing = [p for p in _REQUIRED[self.kind] if p not in self.parameters]
        if missing:
            raise ValueError(f"profile {self.kind.value} is missing parameters {missing}")
        object.__setattr__(self, "parameters", {k: float(v) for k, v in self.parameters.items()})
        if self.is_peak:
            p = self.parameters
            if not 0 < p["step_at"] < 1:
                raise ValueError("step_at must lie strictly inside (0, 1)")
            if not math.isclose(p["peak_gain"], 1.0 - p["step_at"], abs_tol=1e-12):
                raise ValueError("peak_gain must equal the fitness range left after the step")

    @property
    def is_peak(self) -> bool:
        return self.kind in (ProfileKind.AVOIDABLE_PEAK, ProfileKind.UNAVOIDABLE_PEAK)

    def sigma(self, f):
        """Noise standard deviation for fitness coordinate(s) ``f`` in [0, 1]."""
        f = np.asarray(f, dtype=np.float64)
        p = self.parameters
        k = self.kind
        if k is ProfileKind.LINEAR:
            return p["sigma_max"] * f
        if k is ProfileKind.DECEPTIVE:
            return p["sigma_max"] * np.where(f <= 0.5, 2.0 * f, 2.0 - 2.0 * f)
        if self.is_peak:
            return np.where(f <= p["step_at"], p["sigma_base"], p["sigma_base"] + p["peak_drop"])
        if k is ProfileKind.REPROD_GRADIENT:
            return p["sigma_max"] * (1.0 - f)
        # rugged: a sine valley pattern on top of a gentle slope, local minima
        # of unequal depth, values inside [0, sigma_max]
        wave = 0.5 * (1.0 + np.sin(2.0 * np.pi * p["cycles"] * f))
        return p["sigma_max"] * ((1.0 - p["tilt"]) * wave + p["tilt"] * (1.0 - f))


def profile_sigma(profile: ProfileSpec, f: float) -> float:
    if not 0.0 <= f <= 1.0:
        raise ValueError(f"fitness coordinate {f} outside [0, 1]")
    return float(profile.sigma(f))


@dataclass(frozen=True)
class TaskSpec:
    name: str
    profile: ProfileSpec
    grid: GridSpec
    default_preference: DeltaPreference
    genotype_dim: int = 3
    feature_dim: int = 2
    fitness_range: tuple[float, float] = (0.0, 1.0)
    reproducibility_task: bool = False
    description: str = ""
    # range of the fitness-encoding gene for initial genotypes; the
    # feature genes are always uniform over the box
    initial_fitness_coordinate: tuple[float, float] = (0.0, 1.0)

    @property
    def fitness_offset(self) -> float:
        return self.fitness_range[0]

    @property
    def genotype_bounds(self) -> tuple[float, float]:
        return 0.0, 1.0

    @property
    def sigma_max(self) -> float:
        scan = self.profile.sigma(_scan_grid())
        return float(scan.max())

    @property
    def expected_optimum_fitness_band(self) -> tuple[float, float]:
        return optimum_band(self, self.default_preference)

    def validate(self):
        if self.genotype_dim != 3 or self.feature_dim != 2:
            raise ValueError("Direct Mapping tasks have a 3-D genotype and 2-D features")
        if self.grid.num_features != self.feature_dim:
            raise ValueError("grid dimensionality does not match feature_dim")
        sig = self.profile.sigma(_scan_grid())
        if not np.all(np.isfinite(sig)) or np.any(sig < 0):
            raise ValueError(f"task {self.name}: profile sigma must be finite and non-negative on [0, 1]")
        lo, hi = self.initial_fitness_coordinate
        if not 0.0 <= lo <= hi <= 1.0:
            raise ValueError(f"task {self.name}: initial_fitness_coordinate must be a sub-interval of [0, 1]")
        return self


def _scan_grid() -> np.ndarray:
    return np.arange(SCAN_POINTS, dtype=np.float64) / (SCAN_POINTS - 1)


# ---------------------------------------------------------------------------
# task files


def task_from_dict(data: Mapping) -> TaskSpec:
    grid = data["grid"]
    pref = data["default_preference"]
    task = TaskSpec(
        name=data["name"],
        profile=ProfileSpec(data["profile"]["kind"], data["profile"].get("parameters", {})),
        grid=GridSpec(grid["feature_mins"], grid["feature_maxs"], grid["cells_per_dim"], grid.get("depth", 1)),
        default_preference=DeltaPreference(pref["delta_f"], pref["delta_r"], pref.get("rho", 1e-6)),
        genotype_dim=int(data.get("genotype_dim", 3)),
        feature_dim=int(data.get("feature_dim", 2)),
        fitness_range=tuple(data.get("fitness_range", (0.0, 1.0))),
        reproducibility_task=bool(data.get("reproducibility_task", False)),
        description=data.get("description", ""),
        initial_fitness_coordinate=tuple(float(v) for v in data.get("initial_fitness_coordinate", (0.0, 1.0))),
    )
    return task.validate()


def task_to_dict(task: TaskSpec) -> dict:
    return {
        "name": task.name,
        "description": task.description,
        "profile": {"kind": task.profile.kind.value, "parameters": dict(task.profile.parameters)},
        "grid": {
            "feature_mins": list(task.grid.feature_mins),
            "feature_maxs": list(task.grid.feature_maxs),
            "cells_per_dim": list(task.grid.cells_per_dim),
        },
        "default_preference": {
            "delta_f": task.default_preference.delta_f,
            "delta_r": task.default_preference.delta_r,
            "rho": task.default_preference.rho,
        },
        "genotype_dim": task.genotype_dim,
        "feature_dim": task.feature_dim,
        "fitness_range": list(task.fitness_range),
        "reproducibility_task": task.reproducibility_task,
        "initial_fitness_coordinate": list(task.initial_fitness_coordinate),
    }


def list_tasks() -> list[str]:
    root = resources.files(__package__) / "task_defs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_task(name_or_path: str | Path) -> TaskSpec:
    """Load a packaged task by name, or any task definition file by path."""
    path = Path(name_or_path)
    if path.suffix == ".json" and path.exists():
        text = path.read_text()
    else:
        res = resources.files(__package__) / "task_defs" / f"{name_or_path}.json"
        if not res.is_file():
            raise KeyError(f"unknown task {name_or_path!r}; known tasks: {', '.join(list_tasks())}")
        text = res.read_text()
    return task_from_dict(json.loads(text))


# Table-of-tasks constants for the robotic environments. Not runnable here:
# they need physics simulation and neural controllers.
ROBOTIC_TASK_PREFERENCES = {
    "hexapod": DeltaPreference(140.0, 0.14),
    "walker": DeltaPreference(260.0, 0.04),
    "ant": DeltaPreference(220.0, 6.0),
}


# ---------------------------------------------------------------------------
# evaluation


def _check_genotypes(task: TaskSpec, genotypes: np.ndarray):
    if genotypes.ndim != 2 or genotypes.shape[1] != task.genotype_dim:
        raise ValueError(f"genotypes must have shape (B, {task.genotype_dim})")
    lo, hi = task.genotype_bounds
    if genotypes.size and (genotypes.min() < lo or genotypes.max() > hi):
        raise ValueError("genotype coordinates must lie in [0, 1]")


def _evaluate_chunk(task, genotypes, n_samples, stream_key, first_index):
    b = len(genotypes)
    d = task.feature_dim
    start = first_index * n_samples * d
    counters = np.arange(start, start + b * n_samples * d, dtype=np.uint64)
    eps = normals(stream_key, counters).reshape(b, n_samples, d).transpose(0, 2, 1)
    sigma = task.profile.sigma(genotypes[:, 0])
    features = np.clip(genotypes[:, 1:, None] + sigma[:, None, None] * eps, 0.0, 1.0)
    if task.reproducibility_task:
        fitness = np.zeros((b, n_samples))
    else:
        fitness = np.repeat(genotypes[:, :1], n_samples, axis=1)
    return fitness, np.ascontiguousarray(features)


def evaluate_batch(
    task: TaskSpec,
    genotypes: np.ndarray,
    n_samples: int,
    stream: RngStream,
    first_index: int = 0,
    workers: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate ``B`` genotypes ``n_samples`` times each.

    Returns fitness ``(B, n)`` and features ``(B, D, n)``. Sample ``s`` of row
    ``b`` uses noise draws ``((first_index + b) * n + s) * D + j`` of
    ``stream``, so splitting the batch over ``workers`` threads is exact.
    """
    genotypes = np.asarray(genotypes, dtype=np.float64)
    _check_genotypes(task, genotypes)
    key = stream.key
    if workers <= 1 or len(genotypes) < 2 * workers:
        return _evaluate_chunk(task, genotypes, n_samples, key, first_index)
    bounds = np.linspace(0, len(genotypes), workers + 1).astype(int)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(
            pool.map(
                lambda ab: _evaluate_chunk(task, genotypes[ab[0]:ab[1]], n_samples, key, first_index + ab[0]),
                zip(bounds[:-1], bounds[1:]),
            )
        )
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def evaluate(task: TaskSpec, genotype, stream: RngStream, draw_index: int = 0) -> EvaluationSample:
    """One stochastic evaluation; ``draw_index`` addresses the noise draws."""
    g = np.asarray(genotype, dtype=np.float64)[None]
    fitness, features = evaluate_batch(task, g, 1, stream, first_index=draw_index)
    return EvaluationSample(float(fitness[0, 0]), tuple(float(v) for v in features[0, :, 0]))


def sample_genotypes(task: TaskSpec, stream: RngStream, count: int) -> np.ndarray:
    """Initial genotypes: the fitness gene uniform over the task's initial
    range, the feature genes uniform over the genotype box."""
    lo, hi = task.genotype_bounds
    u = stream.uniform_block((count, task.genotype_dim))
    out = lo + (hi - lo) * u
    f_lo, f_hi = task.initial_fitness_coordinate
    out[:, 0] = f_lo + (f_hi - f_lo) * u[:, 0]
    return out


# ---------------------------------------------------------------------------
# optimum analysis

_DISPERSION_PER_SIGMA = {
    ReproducibilityEstimator.NEG_STD: 1.0,
    ReproducibilityEstimator.NEG_MAD: float(ndtri(0.75)),
    ReproducibilityEstimator.NEG_IQR: float(2.0 * ndtri(0.75)),
}


def implied_reproducibility(task: TaskSpec, f, estimator=ReproducibilityEstimator.NEG_STD):
    """Reproducibility estimate implied by the profile at fitness ``f``.

    This is the large-sample value for an unclipped Gaussian: minus sigma
    scaled by the estimator's dispersion-per-sigma ratio.
    """
    return -_DISPERSION_PER_SIGMA[ReproducibilityEstimator(estimator)] * task.profile.sigma(f)


def _scan(task: TaskSpec, pref: DeltaPreference, estimator):
    f = _scan_grid()
    r = implied_reproducibility(task, f, estimator)
    fit = np.zeros_like(f) if task.reproducibility_task else f
    return f, weighted_fitness(fit, r, pref)


def optimum_value(task: TaskSpec, pref: DeltaPreference, estimator=ReproducibilityEstimator.NEG_STD) -> float:
    """Best attainable weighted fitness on the task's profile."""
    return float(_scan(task, pref, estimator)[1].max())


def optimum_band(
    task: TaskSpec,
    pref: DeltaPreference,
    tau: float = BAND_TOLERANCE,
    estimator=ReproducibilityEstimator.NEG_STD,
) -> tuple[float, float]:
    """Fitness interval whose weighted fitness is within ``tau`` of the best.

    Reproducibility tasks pin every fitness to 0, so their band is (0, 0).
    """
    if task.reproducibility_task:
        return 0.0, 0.0
    f, wf = _scan(task, pref, estimator)
    good = f[wf >= wf.max() - tau]
    return float(good.min()), float(good.max())
