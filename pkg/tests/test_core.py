import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import kstest

from qdtradeoff.core import (
    DEFAULT_ESTIMATORS,
    DeltaPreference,
    EstimatorConfig,
    EvaluationSample,
    FeatureEstimator,
    PerformanceEstimator,
    ReproducibilityEstimator,
    SolutionRecord,
    estimate_features,
    estimate_performance,
    estimate_reproducibility,
    records_from_batch,
)
from qdtradeoff.rng import RngStream, Role, generation_stream, normals, stream_key, uniforms


def samples_from(fitness, features=None):
    if features is None:
        features = [(0.0, 0.0)] * len(fitness)
    return [EvaluationSample(float(f), tuple(map(float, d))) for f, d in zip(fitness, features)]


def cfg(perf="mean", repro="neg_std", feat="mean"):
    return EstimatorConfig(perf, repro, feat)


# --- rng ---------------------------------------------------------------------


def test_draws_depend_only_on_key_and_counter():
    key = stream_key(7, 1, 2)
    all_at_once = normals(key, np.arange(1000, dtype=np.uint64))
    pieces = np.concatenate([normals(key, np.arange(a, a + 100, dtype=np.uint64)) for a in range(900, -1, -100)][::-1])
    assert np.array_equal(all_at_once, pieces)
    shuffled = np.random.default_rng(0).permutation(1000).astype(np.uint64)
    assert np.array_equal(normals(key, shuffled), all_at_once[shuffled.astype(np.int64)])


def test_streams_differ_by_role_generation_and_seed():
    a = generation_stream(1, Role.EVALUATION, 0).normal_block(64)
    assert not np.array_equal(a, generation_stream(1, Role.EVALUATION, 1).normal_block(64))
    assert not np.array_equal(a, generation_stream(1, Role.MUTATION, 0).normal_block(64))
    assert not np.array_equal(a, generation_stream(2, Role.EVALUATION, 0).normal_block(64))


def test_uniforms_open_interval_and_distribution():
    u = uniforms(stream_key(3), np.arange(200_000, dtype=np.uint64))
    assert u.min() > 0 and u.max() < 1
    assert kstest(u, "uniform").pvalue > 1e-3
    z = normals(stream_key(4), np.arange(200_000, dtype=np.uint64))
    assert kstest(z, "norm").pvalue > 1e-3


def test_rng_stream_rejects_out_of_range_seed():
    with pytest.raises(ValueError):
        RngStream(-1)
    with pytest.raises(ValueError):
        RngStream(2**64)
    RngStream(2**64 - 1).normal_block(3)


# --- preference -------------------------------------------------------------


def test_delta_preference_validation():
    with pytest.raises(ValueError):
        DeltaPreference(-0.1, 0.0)
    with pytest.raises(ValueError):
        DeltaPreference(0.0, -1.0)
    with pytest.raises(ValueError):
        DeltaPreference(0.0, 0.0, rho=0.0)
    assert DeltaPreference(2.0, 1.0, 1e-12).coefficient == pytest.approx(2.0)


def test_estimator_config_defaults_and_validation():
    assert DEFAULT_ESTIMATORS == EstimatorConfig(
        PerformanceEstimator.MEAN, ReproducibilityEstimator.NEG_STD, FeatureEstimator.MEAN
    )
    with pytest.raises(ValueError):
        EstimatorConfig(performance_estimator="trimmed")


# --- performance ------------------------------------------------------------


def test_mean_of_small_list():
    assert estimate_performance(samples_from([2, 4, 9])) == 5.0


@pytest.mark.parametrize("perf", list(PerformanceEstimator))
@given(c=st.floats(-1e6, 1e6, allow_nan=False), n=st.integers(1, 40))
def test_constant_fitness_any_estimator(perf, c, n):
    assert estimate_performance(samples_from([c] * n), cfg(perf=perf)) == c


def test_median_even_count_midpoint():
    assert estimate_performance(samples_from([1, 2, 10, 20]), cfg(perf="median")) == 6.0


def test_closest_to_median_lowest_index_on_ties():
    # median of [1, 3] is 2: both are at distance 1, first wins
    assert estimate_performance(samples_from([3, 1]), cfg(perf="closest_to_median")) == 3.0
    assert estimate_performance(samples_from([0, 5, 9]), cfg(perf="closest_to_median")) == 5.0


def test_mode_is_center_of_fullest_bin():
    # 9 samples -> 3 bins over [0, 9]: [0,3) [3,6) [6,9]
    fit = [0, 1, 4, 4.5, 5, 5.5, 7, 8, 9]
    assert estimate_performance(samples_from(fit), cfg(perf="mode")) == pytest.approx(4.5)


def test_empty_samples_are_usage_errors():
    for fn in (estimate_performance, estimate_features, estimate_reproducibility):
        with pytest.raises(ValueError):
            fn([])


def test_mean_within_three_standard_errors_in_99_percent_of_trials():
    sigma, mu, n, trials = 2.0, 1.5, 512, 1000
    stream = RngStream(11, 1)
    fit = mu + sigma * stream.normal_block((trials, n))
    hits = 0
    for row in fit:
        est = estimate_performance(samples_from(row))
        hits += abs(est - mu) <= 3 * sigma / math.sqrt(n)
    assert hits / trials >= 0.99


# --- features ---------------------------------------------------------------


def test_feature_mean_symmetry_and_identity():
    s = samples_from([0, 0], [(0, 1), (1, 0)])
    assert np.array_equal(estimate_features(s), [0.5, 0.5])
    one = samples_from([0], [(0.3, 0.7)])
    for feat in FeatureEstimator:
        assert np.array_equal(estimate_features(one, cfg(feat=feat)), [0.3, 0.7])


def test_feature_mean_monte_carlo():
    sigma, n, trials = 0.2, 512, 1000
    d = np.array([0.3, 0.6])
    eps = RngStream(12, 2).normal_block((trials, 2, n))
    hits = 0
    for t in range(trials):
        feats = d[:, None] + sigma * eps[t]
        est = estimate_features(samples_from(np.zeros(n), feats.T))
        hits += bool(np.all(np.abs(est - d) <= 4 * sigma / math.sqrt(n)))
    assert hits / trials >= 0.99


# --- reproducibility --------------------------------------------------------


@pytest.mark.parametrize("method", list(ReproducibilityEstimator))
def test_identical_features_are_maximally_reproducible(method):
    s = samples_from([0] * 5, [(0.2, 0.4)] * 5)
    assert estimate_reproducibility(s, cfg(repro=method)) == 0.0


def test_neg_std_hand_computed():
    s = samples_from([0, 0], [(0, 0), (2, 0)])
    assert estimate_reproducibility(s) == pytest.approx(-math.sqrt(0.5), abs=1e-15)


def test_single_sample_reproducibility_is_zero():
    for method in ReproducibilityEstimator:
        assert estimate_reproducibility(samples_from([1.0], [(0.1, 0.9)]), cfg(repro=method)) == 0.0


@given(
    feats=st.lists(st.tuples(st.floats(-10, 10), st.floats(-10, 10)), min_size=1, max_size=30),
    k=st.floats(0.01, 100),
)
def test_neg_std_homogeneous_and_non_positive(feats, k):
    base = estimate_reproducibility(samples_from([0] * len(feats), feats))
    scaled = estimate_reproducibility(samples_from([0] * len(feats), [(k * a, k * b) for a, b in feats]))
    assert base <= 0
    assert scaled == pytest.approx(k * base, rel=1e-9, abs=1e-9)


@given(feats=st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5)), min_size=1, max_size=20))
def test_neg_std_zero_iff_identical(feats):
    r = estimate_reproducibility(samples_from([0] * len(feats), feats))
    assert (r == 0) == (len(set(feats)) == 1)


def test_duplicating_a_constant_sample_keeps_estimates():
    s = samples_from([3.0] * 4, [(0.5, 0.5)] * 4)
    longer = s + [s[0]]
    assert estimate_performance(longer) == estimate_performance(s) == 3.0
    assert estimate_reproducibility(longer) == estimate_reproducibility(s) == 0.0


# --- records ----------------------------------------------------------------


@pytest.mark.parametrize("perf", list(PerformanceEstimator))
@pytest.mark.parametrize("repro", list(ReproducibilityEstimator))
@pytest.mark.parametrize("feat", list(FeatureEstimator))
def test_batched_estimates_match_per_record(perf, repro, feat):
    c = cfg(perf, repro, feat)
    stream = RngStream(5, 5)
    fit = stream.normal_block((20, 9))
    features = stream.normal_block((20, 2, 9), start=1000)
    records = records_from_batch(np.zeros((20, 3)), fit, features, c)
    for rec in records:
        assert rec.sample_count == len(rec.samples) == 9
        assert rec.est_fitness == estimate_performance(rec.samples, c)
        assert np.array_equal(rec.est_features, estimate_features(rec.samples, c))
        assert rec.est_reproducibility == estimate_reproducibility(rec.samples, c)
        assert math.isfinite(rec.est_reproducibility)


def test_record_from_samples_roundtrip():
    s = samples_from([1.0, 2.0], [(0.1, 0.2), (0.3, 0.4)])
    rec = SolutionRecord.from_samples(np.array([0.1, 0.2, 0.3]), s)
    assert rec.samples == s
    assert rec.objectives == (1.5, estimate_reproducibility(s))
