"""Domain types and the estimator menu for performance and reproducibility.

Conventions used throughout the package:

* a genotype is a 1-D float array (``Genotype`` is an alias, not a class);
* fitness samples of one solution are an array of shape ``(n,)``;
* feature samples are stored coordinate-major, shape ``(D, n)``, so every
  reduction runs along the last, contiguous axis. The batched estimators
  take stacks of shape ``(k, n)`` / ``(k, D, n)`` and give row-for-row the
  same bits as estimating each solution alone.

Reproducibility estimates follow a "higher is more reproducible" sign
convention: they are negated dispersions. A solution with a single sample
gets reproducibility 0 (no observed dispersion).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple, Sequence

import numpy as np

Genotype = np.ndarray


class PerformanceEstimator(str, Enum):
    MEAN = "mean"
    MEDIAN = "median"
    CLOSEST_TO_MEDIAN = "closest_to_median"
    MODE = "mode"


class ReproducibilityEstimator(str, Enum):
    NEG_STD = "neg_std"
    NEG_MAD = "neg_mad"
    NEG_IQR = "neg_iqr"


class FeatureEstimator(str, Enum):
    MEAN = "mean"
    MEDIAN = "median"


@dataclass(frozen=True)
class EstimatorConfig:
    performance_estimator: PerformanceEstimator = PerformanceEstimator.MEAN
    reproducibility_estimator: ReproducibilityEstimator = ReproducibilityEstimator.NEG_STD
    feature_estimator: FeatureEstimator = FeatureEstimator.MEAN

    def __post_init__(self):
        # accept plain strings, reject anything outside the enums
        object.__setattr__(self, "performance_estimator", PerformanceEstimator(self.performance_estimator))
        object.__setattr__(
            self, "reproducibility_estimator", ReproducibilityEstimator(self.reproducibility_estimator)
        )
        object.__setattr__(self, "feature_estimator", FeatureEstimator(self.feature_estimator))


DEFAULT_ESTIMATORS = EstimatorConfig()


class EvaluationSample(NamedTuple):
    fitness: float
    features: tuple[float, ...]


@dataclass(frozen=True)
class DeltaPreference:
    """Trade-off preference: a gain of ``delta_r`` in reproducibility
    compensates a loss of ``delta_f`` in fitness. ``rho`` is the small
    positive constant keeping the weighted-sum coefficient defined."""

    delta_f: float
    delta_r: float
    rho: float = 1e-6

    def __post_init__(self):
        if not (self.delta_f >= 0 and self.delta_r >= 0):
            raise ValueError(f"deltas must be non-negative, got ({self.delta_f}, {self.delta_r})")
        if not self.rho > 0:
            raise ValueError(f"rho must be strictly positive, got {self.rho}")

    @property
    def coefficient(self) -> float:
        return (self.delta_f + self.rho) / (self.delta_r + self.rho)


# ---------------------------------------------------------------------------
# batched estimators


def _shifted_mean(x: np.ndarray) -> np.ndarray:
    # anchoring on the first sample makes constant rows exact
    anchor = x[..., :1]
    return anchor[..., 0] + (x - anchor).mean(axis=-1)


def _mode_rows(x: np.ndarray) -> np.ndarray:
    k, n = x.shape
    bins = math.ceil(math.sqrt(n))
    lo = x.min(axis=-1)
    hi = x.max(axis=-1)
    span = hi - lo
    flat = span == 0
    safe = np.where(flat, 1.0, span)
    idx = np.floor((x - lo[:, None]) / safe[:, None] * bins).astype(np.int64)
    idx = np.clip(idx, 0, bins - 1)
    counts = np.bincount((idx + bins * np.arange(k)[:, None]).ravel(), minlength=k * bins)
    best = counts.reshape(k, bins).argmax(axis=-1)
    centers = lo + (best + 0.5) * (span / bins)
    return np.where(flat, lo, centers)


def performance_batch(fitness: np.ndarray, method=PerformanceEstimator.MEAN) -> np.ndarray:
    """Performance estimate per row of a ``(k, n)`` fitness array."""
    x = np.asarray(fitness, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] == 0:
        raise ValueError("performance estimation needs a (k, n) array with n >= 1")
    method = PerformanceEstimator(method)
    if method is PerformanceEstimator.MEAN:
        return _shifted_mean(x)
    if method is PerformanceEstimator.MEDIAN:
        return np.median(x, axis=-1)
    if method is PerformanceEstimator.CLOSEST_TO_MEDIAN:
        med = np.median(x, axis=-1, keepdims=True)
        pick = np.argmin(np.abs(x - med), axis=-1)  # first index on ties
        return np.take_along_axis(x, pick[:, None], axis=-1)[:, 0]
    return _mode_rows(x)


def features_batch(features: np.ndarray, method=FeatureEstimator.MEAN) -> np.ndarray:
    """Coordinate-wise feature estimate for a ``(k, D, n)`` array -> ``(k, D)``."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] == 0:
        raise ValueError("feature estimation needs a (k, D, n) array with n >= 1")
    if FeatureEstimator(method) is FeatureEstimator.MEAN:
        return _shifted_mean(x)
    return np.median(x, axis=-1)


def dispersion_batch(features: np.ndarray, method=ReproducibilityEstimator.NEG_STD) -> np.ndarray:
    """Per-coordinate dispersion ``(k, D)``: population std, MAD or IQR."""
    x = np.asarray(features, dtype=np.float64)
    method = ReproducibilityEstimator(method)
    if method is ReproducibilityEstimator.NEG_STD:
        centred = x - _shifted_mean(x)[..., None]
        return np.sqrt((centred * centred).mean(axis=-1))
    if method is ReproducibilityEstimator.NEG_MAD:
        med = np.median(x, axis=-1, keepdims=True)
        return np.median(np.abs(x - med), axis=-1)
    q75, q25 = np.percentile(x, [75.0, 25.0], axis=-1)
    return q75 - q25


def reproducibility_batch(features: np.ndarray, method=ReproducibilityEstimator.NEG_STD) -> np.ndarray:
    """Negated root-mean-square dispersion per row of a ``(k, D, n)`` array."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] == 0:
        raise ValueError("reproducibility estimation needs a (k, D, n) array with n >= 1")
    if x.shape[2] == 1:
        return np.zeros(x.shape[0])
    disp = dispersion_batch(x, method)
    return -np.sqrt((disp * disp).mean(axis=-1))


def estimate_batch(fitness: np.ndarray, features: np.ndarray, cfg: EstimatorConfig = DEFAULT_ESTIMATORS):
    """All three estimates for stacked samples; returns ``(f, d, r)`` arrays."""
    return (
        performance_batch(fitness, cfg.performance_estimator),
        features_batch(features, cfg.feature_estimator),
        reproducibility_batch(features, cfg.reproducibility_estimator),
    )


# ---------------------------------------------------------------------------
# sample-list API


def samples_to_arrays(samples: Sequence[EvaluationSample]) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(fitness (n,), features (D, n))`` for a list of samples."""
    if len(samples) == 0:
        raise ValueError("at least one evaluation sample is required")
    fitness = np.array([s.fitness for s in samples], dtype=np.float64)
    features = np.array([s.features for s in samples], dtype=np.float64).T.copy()
    return fitness, features


def estimate_performance(samples: Sequence[EvaluationSample], cfg: EstimatorConfig = DEFAULT_ESTIMATORS) -> float:
    fitness, _ = samples_to_arrays(samples)
    return float(performance_batch(fitness[None], cfg.performance_estimator)[0])


def estimate_features(samples: Sequence[EvaluationSample], cfg: EstimatorConfig = DEFAULT_ESTIMATORS) -> np.ndarray:
    _, features = samples_to_arrays(samples)
    return features_batch(features[None], cfg.feature_estimator)[0]


def estimate_reproducibility(
    samples: Sequence[EvaluationSample], cfg: EstimatorConfig = DEFAULT_ESTIMATORS
) -> float:
    _, features = samples_to_arrays(samples)
    return float(reproducibility_batch(features[None], cfg.reproducibility_estimator)[0])


# ---------------------------------------------------------------------------


class SolutionRecord:
    """A genotype with its evaluation samples and cached estimates.

    Records are treated as immutable; adaptive sampling builds a new record
    when a sample is appended. Records read back from a summary-only archive
    file carry estimates and ``sample_count`` but no samples.
    """

    __slots__ = (
        "genotype",
        "fitness_samples",
        "feature_samples",
        "est_fitness",
        "est_features",
        "est_reproducibility",
        "sample_count",
    )

    def __init__(
        self,
        genotype,
        fitness_samples,
        feature_samples,
        est_fitness: float,
        est_features,
        est_reproducibility: float,
        sample_count: int | None = None,
    ):
        self.genotype = genotype
        self.fitness_samples = fitness_samples
        self.feature_samples = feature_samples
        self.est_fitness = float(est_fitness)
        self.est_features = est_features
        self.est_reproducibility = float(est_reproducibility)
        if sample_count is None:
            sample_count = 0 if fitness_samples is None else len(fitness_samples)
        self.sample_count = int(sample_count)

    @classmethod
    def from_arrays(cls, genotype, fitness, features, cfg: EstimatorConfig = DEFAULT_ESTIMATORS) -> "SolutionRecord":
        fitness = np.asarray(fitness, dtype=np.float64)
        features = np.asarray(features, dtype=np.float64)
        return records_from_batch(np.asarray(genotype)[None], fitness[None], features[None], cfg)[0]

    @classmethod
    def from_samples(cls, genotype, samples: Sequence[EvaluationSample], cfg=DEFAULT_ESTIMATORS) -> "SolutionRecord":
        fitness, features = samples_to_arrays(samples)
        return cls.from_arrays(genotype, fitness, features, cfg)

    @property
    def samples(self) -> list[EvaluationSample]:
        if self.fitness_samples is None:
            return []
        return [
            EvaluationSample(float(f), tuple(float(v) for v in self.feature_samples[:, j]))
            for j, f in enumerate(self.fitness_samples)
        ]

    @property
    def objectives(self) -> tuple[float, float]:
        return self.est_fitness, self.est_reproducibility

    def __repr__(self):
        return (
            f"SolutionRecord(f={self.est_fitness:.4g}, r={self.est_reproducibility:.4g}, "
            f"d={np.round(self.est_features, 4).tolist()}, n={self.sample_count})"
        )


def records_from_batch(genotypes, fitness, features, cfg: EstimatorConfig = DEFAULT_ESTIMATORS) -> list[SolutionRecord]:
    """Build records for stacked samples ``(k, n)`` / ``(k, D, n)``."""
    est_f, est_d, est_r = estimate_batch(fitness, features, cfg)
    return [
        SolutionRecord(genotypes[i], fitness[i], features[i], est_f[i], est_d[i], est_r[i])
        for i in range(len(est_f))
    ]
