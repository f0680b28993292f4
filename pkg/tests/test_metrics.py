import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import make_record
from qdtradeoff.algorithms import AlgorithmConfig, run_experiment
from qdtradeoff.archive import AdditionRule, GridArchive, GridSpec, ParetoArchive
from qdtradeoff.core import DeltaPreference
from qdtradeoff.metrics import (
    CorrectedArchive,
    ReevaluationData,
    average_fitness,
    average_reproducibility,
    corrected_archive,
    corrected_qd_score,
    metric_report,
    reevaluate_archive,
    reproducibility_contributions,
    reproducibility_score,
    training_summary,
    weighted_regret,
)
from qdtradeoff.tasks import load_task, optimum_value

GRID = GridSpec((0.0, 0.0), (1.0, 1.0), (32, 32))
LINEAR = load_task("linear")


def data_from(fitness_rows, feature_rows):
    """Reevaluation data from explicit per-solution sample arrays."""
    fit = np.asarray(fitness_rows, dtype=np.float64)
    feat = np.asarray(feature_rows, dtype=np.float64)
    k = len(fit)
    return ReevaluationData(GRID, np.zeros((k, 3)), np.zeros(k, np.int64), fit, feat)


def constant_solution(f, d, n=4):
    return np.full(n, f), np.repeat(np.asarray(d, dtype=np.float64)[:, None], n, axis=1)


def spread_solution(f, d, var, n=2):
    # two samples at d +/- s give population variance s^2 per coordinate
    s = np.sqrt(var)
    feats = np.stack([np.asarray(d) - s, np.asarray(d) + s], axis=-1)
    return np.full(n, f), feats


def archive_of(points, task=LINEAR):
    arch = GridArchive(task.grid, AdditionRule.fitness_only())
    for f, d in points:
        g = np.array([f, *d])
        arch.add(make_record(f, 0.0, features=d, genotype=g))
    return arch


# --- reevaluation -----------------------------------------------------------


def test_zero_noise_reevaluation_samples_identical():
    arch = archive_of([(0.0, (0.3, 0.3)), (0.0, (0.7, 0.2))])
    data = reevaluate_archive(arch, LINEAR, n=512, seed=1)
    assert data.fitness.shape == (2, 512) and data.features.shape == (2, 2, 512)
    assert np.all(data.features == data.features[..., :1])


def test_reevaluation_preconditions():
    with pytest.raises(ValueError):
        reevaluate_archive(archive_of([(0.1, (0.5, 0.5))]), LINEAR, n=1)
    with pytest.raises(TypeError):
        reevaluate_archive(ParetoArchive(GRID), LINEAR)


def test_training_draws_unaffected_by_reevaluation_count():
    c = AlgorithmConfig.for_task(LINEAR, "me_weighted", generations=3)
    a = run_experiment(LINEAR, c, seed=7)
    reevaluate_archive(a.archive, LINEAR, n=8, seed=7)
    reevaluate_archive(a.archive, LINEAR, n=64, seed=7)
    b = run_experiment(LINEAR, c, seed=7)
    assert a.trace == b.trace


def test_reevaluation_prefix_is_stable_across_counts():
    arch = archive_of([(0.5, (0.5, 0.5))])
    small = reevaluate_archive(arch, LINEAR, n=4, seed=2)
    large = reevaluate_archive(arch, LINEAR, n=512, seed=2)
    assert small.features.shape[-1] == 4 and large.features.shape[-1] == 512


# --- corrected archive ------------------------------------------------------


def test_single_solution_lands_in_its_corrected_cell():
    fit, feat = constant_solution(0.4, (0.81, 0.12))
    ca = corrected_archive(data_from([fit], [feat]))
    assert list(ca.cells) == [GRID.flat_index((0.81, 0.12))]
    assert average_fitness(ca) == pytest.approx(0.4)


def test_collision_goes_to_higher_corrected_fitness_then_reproducibility():
    a = constant_solution(5.0, (0.5, 0.5))
    b = constant_solution(7.0, (0.5, 0.5))
    ca = corrected_archive(data_from([a[0], b[0]], [a[1], b[1]]))
    assert ca.num_filled == 1 and ca.cell_fitness().tolist() == [7.0]
    noisy = spread_solution(7.0, (0.5, 0.5), 1e-6)
    ca = corrected_archive(data_from([noisy[0], b[0][:2]], [noisy[1], b[1][:, :2]]))
    assert ca.cells == {GRID.flat_index((0.5, 0.5)): 1}


def test_corrected_values_are_medians():
    fit = np.array([[0.1, 0.9, 0.2, 0.3, 0.25]])
    feat = np.array([[[0.1, 0.2, 0.3, 0.4, 0.9], [0.5, 0.5, 0.5, 0.5, 0.0]]])
    ca = corrected_archive(data_from(fit, feat))
    assert ca.fitness.tolist() == [0.25]
    assert ca.features.tolist() == [[0.3, 0.5]]


def test_corrected_occupancy_never_exceeds_training_and_is_idempotent():
    res = run_experiment(LINEAR, AlgorithmConfig.for_task(LINEAR, "vanilla_me", generations=5), seed=1)
    data = reevaluate_archive(res.archive, LINEAR, n=16, seed=1)
    ca = corrected_archive(data)
    assert ca.num_filled <= res.archive.num_filled
    again = corrected_archive(data)
    assert ca.cells == again.cells and np.array_equal(ca.fitness, again.fitness)


def test_zero_noise_task_corrected_matches_training():
    arch = archive_of([(0.0, (0.1, 0.1)), (0.0, (0.6, 0.3)), (0.0, (0.9, 0.9))])
    ca = corrected_archive(reevaluate_archive(arch, LINEAR, n=32, seed=0))
    assert sorted(ca.cells) == sorted(arch.cells)
    assert reproducibility_score([ca]) == [3.0]


# --- scores -----------------------------------------------------------------


def test_qd_score_examples():
    empty = corrected_archive(data_from(np.empty((0, 2)), np.empty((0, 2, 2))))
    assert corrected_qd_score(empty) == 0.0
    assert average_fitness(empty) is None and average_reproducibility(empty, LINEAR) is None
    sols = [constant_solution(f, d) for f, d in [(0.2, (0.1, 0.1)), (0.5, (0.5, 0.5)), (0.9, (0.9, 0.9))]]
    ca = corrected_archive(data_from([s[0] for s in sols], [s[1] for s in sols]))
    assert corrected_qd_score(ca) == pytest.approx(1.6)
    rev = corrected_archive(data_from([s[0] for s in sols[::-1]], [s[1] for s in sols[::-1]]))
    assert corrected_qd_score(rev) == pytest.approx(corrected_qd_score(ca))


@given(st.lists(st.tuples(st.floats(0, 1), st.integers(0, 1023)), max_size=30), st.floats(0, 1), st.integers(0, 1023))
def test_qd_score_non_negative_and_monotone(points, f_new, cell):
    def build(pts):
        rows = [constant_solution(f, ((c // 32 + 0.5) / 32, (c % 32 + 0.5) / 32), n=2) for f, c in pts]
        if not rows:
            return corrected_archive(data_from(np.empty((0, 2)), np.empty((0, 2, 2))))
        return corrected_archive(data_from([r[0] for r in rows], [r[1] for r in rows]))

    before = build(points)
    assert corrected_qd_score(before) >= 0
    if cell not in {c for _, c in points}:
        after = build(points + [(f_new, cell)])
        # summation order differs once a cell is added
        assert corrected_qd_score(after) >= corrected_qd_score(before) - 1e-12


def test_reproducibility_score_examples():
    z = [constant_solution(0.0, (0.1 * i + 0.05, 0.5)) for i in range(4)]
    ca = corrected_archive(data_from([s[0] for s in z], [s[1] for s in z]))
    assert reproducibility_score([ca]) == [4.0]

    one = spread_solution(0.0, (0.5, 0.5), 0.01)
    solo = corrected_archive(data_from([one[0]], [one[1]]))
    assert reproducibility_score([solo]) == [0.0]

    a = spread_solution(0.0, (0.5, 0.5), 1e-4)
    b = spread_solution(0.0, (0.5, 0.5), 4e-4)
    run_a = corrected_archive(data_from([a[0]], [a[1]]))
    run_b = corrected_archive(data_from([b[0]], [b[1]]))
    terms = reproducibility_contributions([run_a, run_b])
    assert [sum(t.values()) for t in terms] == pytest.approx([0.75, 0.0])


def test_reproducibility_pool_includes_collision_losers():
    # the winner of the cell is not the noisiest solution; the loser still sets the normaliser
    winner = spread_solution(0.9, (0.5, 0.5), 1e-4)
    loser = spread_solution(0.1, (0.5, 0.5), 4e-4)
    ca = corrected_archive(data_from([winner[0], loser[0]], [winner[1], loser[1]]))
    assert ca.num_filled == 1
    assert reproducibility_score([ca]) == pytest.approx([0.75])


def test_reproducibility_score_needs_matching_grids():
    a = corrected_archive(data_from(*[[x] for x in constant_solution(0.0, (0.5, 0.5))]))
    other = CorrectedArchive(GridSpec((0.0, 0.0), (1.0, 1.0), (8, 8)), a.fitness, a.features, a.reproducibility,
                             a.sigma, a.variance, a.corrected_cells, dict(a.cells))
    with pytest.raises(ValueError):
        reproducibility_score([a, other])


def test_contributions_within_unit_interval_on_real_runs():
    runs = [run_experiment(LINEAR, AlgorithmConfig.for_task(LINEAR, alg, generations=3), seed=0).archive
            for alg in ("vanilla_me", "me_weighted")]
    cas = [corrected_archive(reevaluate_archive(a, LINEAR, n=8, seed=0)) for a in runs]
    for ca, terms in zip(cas, reproducibility_contributions(cas)):
        vals = np.array(list(terms.values()))
        assert np.all((vals >= 0) & (vals <= 1))
        assert vals.sum() <= ca.num_filled


def test_average_reproducibility():
    z = [constant_solution(0.0, (0.5, 0.5))]
    ca = corrected_archive(data_from([z[0][0]], [z[0][1]]))
    assert average_reproducibility(ca, LINEAR) == 1.0
    # linear task at f = 0.5 has sigma 0.1, half of sigma_max
    arch = archive_of([(0.5, ((i + 0.5) / 8, (j + 0.5) / 8)) for i in range(1, 7) for j in range(1, 7)])
    ca = corrected_archive(reevaluate_archive(arch, LINEAR, n=512, seed=3))
    assert average_reproducibility(ca, LINEAR) == pytest.approx(0.5, abs=0.01)


def test_weighted_regret():
    dec = load_task("deceptive")
    pref = dec.default_preference
    # stuck at f = 0.4: sigma 0.16, so regret = 1 - (0.4 - coef * 0.16) with coef = 1
    arch = archive_of([(0.4, ((i + 0.5) / 8, (j + 0.5) / 8)) for i in range(2, 6) for j in range(2, 6)], dec)
    ca = corrected_archive(reevaluate_archive(arch, dec, n=512, seed=4))
    assert weighted_regret(ca, dec, pref) == pytest.approx(0.6 + 0.16, abs=0.01)
    # on the optimum: zero noise at f = 1
    top = archive_of([(1.0, (0.5, 0.5)), (1.0, (0.2, 0.7))], dec)
    ca = corrected_archive(reevaluate_archive(top, dec, n=16, seed=4))
    assert weighted_regret(ca, dec, pref) <= 0.02
    assert optimum_value(dec, pref) == pytest.approx(1.0)


def test_metric_report_fields():
    res = run_experiment(LINEAR, AlgorithmConfig.for_task(LINEAR, "me_delta", generations=3), seed=0)
    ca = corrected_archive(reevaluate_archive(res.archive, LINEAR, n=8, seed=0))
    rep = metric_report(ca, LINEAR, LINEAR.default_preference, reproducibility_score([ca])[0])
    assert 0 <= rep.coverage <= 1
    assert rep.reproducibility_score <= rep.filled_cells == ca.num_filled
    assert rep.weighted_regret >= 0


def test_training_summary_uses_best_member_for_pareto_cells():
    arch = ParetoArchive(GRID)
    arch.add(make_record(0.8, -0.3))
    arch.add(make_record(0.2, -0.1))
    s = training_summary(arch, LINEAR)
    assert s["occupancy"] == 2 and s["filled_cells"] == 1
    assert s["max_fitness"] == 0.8 and s["training_qd_score"] == pytest.approx(0.8)
    empty = training_summary(GridArchive(GRID, AdditionRule.fitness_only()), LINEAR)
    assert empty["filled_cells"] == 0 and np.isnan(empty["mean_fitness"])


def test_projected_pareto_archive_can_be_reevaluated():
    res = run_experiment(LINEAR, AlgorithmConfig.for_task(LINEAR, "mome_x", generations=3), seed=0)
    from qdtradeoff.archive import project_pareto_archive

    proj = project_pareto_archive(res.archive, DeltaPreference(0.05, 0.05))
    data = reevaluate_archive(proj, LINEAR, n=4, seed=0)
    assert len(data) == res.archive.num_filled
