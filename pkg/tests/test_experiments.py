import math
from types import SimpleNamespace

import numpy as np
import pytest

from mortsel.cohort import parse_cohort_csv, reconstruct_lifelines, thin, to_csv
from mortsel.experiments import (
    CVError,
    StudyTable,
    batch_fit,
    cluster_comparisons,
    cluster_models,
    comparisons_from_table,
    cross_validate,
    cross_validate_models,
    cv_table,
    downsample_study,
    good_bad_summary,
    held_out_error,
    simulate_cohort,
)
from mortsel.hazards import get_model
from mortsel.inference import FitConfig
from mortsel.selection import compare

from conftest import make_cohort

GOMPERTZ = (0.05, 0.11)
FAST = FitConfig(n_random_starts=2)


# ---------------------------------------------------------------- simulation


def test_simulate_zero_hazard():
    ds = simulate_cohort("gompertz", (1e-300, 0.0), 500, seed=4)
    assert np.all(ds.deaths == 0) and np.all(ds.survivors == 500)


def test_simulate_near_certain_death():
    q = 1 - 1e-16
    theta = (-math.log1p(-q), 0.0)
    deaths = np.array([simulate_cohort("gompertz", theta, 1, ages=[80], seed=s).deaths[0] for s in range(10_000)])
    assert np.all(deaths == 1)
    # frequency matches q to within one binomial standard error (here ~1e-10)
    assert abs(deaths.mean() - q) <= 3 * math.sqrt(q * (1 - q) / deaths.size) + 1e-15


def test_simulate_first_age_mean():
    n0 = 1000
    q = float(get_model("gompertz").death_prob(GOMPERTZ, [1])[0])
    d80 = np.array([simulate_cohort("gompertz", GOMPERTZ, n0, seed=s).deaths[0] for s in range(10_000)])
    se = math.sqrt(n0 * q * (1 - q) / d80.size)
    assert abs(d80.mean() - n0 * q) < 3 * se


def test_simulate_structure_and_round_trip():
    ds = simulate_cohort("kannisto", (0.3, 0.12), 5000, seed=9)
    assert list(ds.ages) == list(range(80, 105))
    assert np.all(ds.survivors[1:] == ds.survivors[:-1] - ds.deaths[:-1])
    assert parse_cohort_csv(to_csv(ds), **ds.metadata()) == ds
    assert simulate_cohort("kannisto", (0.3, 0.12), 5000, seed=9) == ds
    assert simulate_cohort("kannisto", (0.3, 0.12), 5000, seed=10) != ds


def test_simulate_rejects_empty_cohort():
    with pytest.raises(ValueError):
        simulate_cohort("gompertz", GOMPERTZ, 0)


# ---------------------------------------------------------------- study tables


def test_study_table_keys_unique_and_csv_round_trip():
    t = StudyTable()
    t.add("A", "Gompertz", "aic", 1.5)
    t.add("A", "Gompertz", "support", "none")
    with pytest.raises(KeyError):
        t.add("A", "Gompertz", "aic", 2.0)
    assert t.get("A", "Gompertz", "aic") == 1.5
    again = StudyTable.from_csv(t.to_csv())
    assert [tuple(map(str, r)) for r in again] == [tuple(map(str, r)) for r in t]


# ---------------------------------------------------------------- batch fitting


@pytest.fixture(scope="module")
def batch():
    cohorts = [simulate_cohort("gompertz", GOMPERTZ, 20_000, seed=s, country="SIM", sex=sex, cohort_year=1900 + s)
               for s, sex in enumerate(["male", "female"])]
    return batch_fit(cohorts, config=FAST, workers=1)


def test_batch_composition(batch):
    assert len(batch.fits) == 18 and not batch.failures
    for cmp in batch.comparisons.values():
        assert len(cmp.rows) == 9
        assert sum(r.delta_aic == 0 for r in cmp.rows) == 1
    assert len(batch.table.where(metric="loglik")) == 18


def test_batch_records_failures():
    tiny = make_cohort([100, 80, 60], [20, 20, 20], country="X", sex="male", cohort_year=1)
    res = batch_fit([tiny], ["gompertz", "weibull", "perks"], FAST, workers=1)
    assert set(res.failures) == {("X_male_1", "Perks")}
    assert res.table.get("X_male_1", "Perks", "failed").startswith("ValueError")
    assert res.comparisons["X_male_1"].models == ("Gompertz", "Weibull")


def test_batch_table_rebuilds_comparisons(batch):
    again = comparisons_from_table(StudyTable.from_csv(batch.table.to_csv()))
    by_id = {c.cohort_id: c for c in again}
    for cid, cmp in batch.comparisons.items():
        assert by_id[cid].rows == cmp.rows


def test_batch_rejects_empty_input():
    with pytest.raises(ValueError):
        batch_fit([])


# ---------------------------------------------------------------- support summaries


def test_summary_single_comparison(batch):
    cmp = next(iter(batch.comparisons.values()))
    t = good_bad_summary([cmp])
    best = cmp.best_model
    assert t.get("all", best, "frac_substantial") == 1.0
    assert t.get("all", best, "frac_none") == 0.0


def test_summary_fractions_and_groups(batch):
    t = good_bad_summary(batch.comparison_list(), by=["all", "sex"])
    groups = {g for g, _, _, _ in t}
    assert groups == {"all", "sex=female", "sex=male"}
    for g, _, metric, v in t:
        if metric.startswith("frac"):
            assert 0.0 <= v <= 1.0
    assert t.get("all", "Gompertz", "n_cohorts") == 2
    with pytest.raises(ValueError):
        good_bad_summary([])


# ---------------------------------------------------------------- cross-validation


def test_held_out_error_perfect_prediction():
    fold = make_cohort([40, 40, 40], [0, 0, 0])
    assert held_out_error("gompertz", (1e-300, 0.0), fold) == pytest.approx(0.0, abs=1e-290)


def test_cv_is_deterministic_and_consistent():
    ds = simulate_cohort("gompertz", GOMPERTZ, 3000, seed=2)
    a = cross_validate("gompertz", ds, k=5, seed=1, config=FAST)
    b = cross_validate("gompertz", ds, k=5, seed=1, config=FAST)
    assert a == b and len(a.fold_errors) == 5
    assert a.mean_error == pytest.approx(np.mean(a.fold_errors), rel=1e-15)
    assert cross_validate("gompertz", ds, k=5, seed=2, config=FAST) != a


def test_cv_rejects_bad_k():
    ds = simulate_cohort("gompertz", GOMPERTZ, 300, seed=2)
    with pytest.raises(ValueError, match="K must be >= 2"):
        cross_validate("gompertz", ds, k=1)


def test_cv_reports_failing_fold():
    # three ages only: Perks needs four
    ds = make_cohort([300, 200, 100], [100, 100, 100])
    with pytest.raises(CVError) as err:
        cross_validate("perks", ds, k=3, config=FAST)
    assert err.value.fold == 0


def test_cv_ranks_are_a_permutation():
    ds = simulate_cohort("gompertz", GOMPERTZ, 2000, seed=5)
    res = cross_validate_models(ds, ["gompertz", "weibull", "makeham"], k=3, config=FAST)
    assert sorted(r.rank for r in res) == [1, 2, 3]
    t = cv_table(res, ds.cohort_id)
    assert len(t.where(metric="mean_error")) == 3 and len(t) == 3 * (3 + 2)


@pytest.mark.slow
def test_cv_prefers_generating_model():
    wins = 0
    for rep in range(20):
        ds = simulate_cohort("gompertz", GOMPERTZ, 5000, seed=100 + rep)
        g, w = cross_validate_models(ds, ["gompertz", "weibull"], k=5, seed=rep, config=FAST)
        wins += g.mean_error <= w.mean_error
    assert wins > 10


# ---------------------------------------------------------------- clustering


def test_identical_rows_merge_at_zero():
    den = cluster_models({"A": [1.0, 5.0], "B": [1.0, 5.0], "C": [9.0, 0.0]})
    assert den.merges[0] == (0, 1, 0.0)
    assert "A:0" in den.newick() and "B:0" in den.newick()


def test_second_merge_height_uses_cluster_mean():
    a, b, c = np.array([0.0, 2.0]), np.array([0.0, 2.0]), np.array([3.0, 6.0])
    den = cluster_models(np.array([a, b, c]), ["A", "B", "C"])
    assert den.clusters() == [frozenset("AB"), frozenset("ABC")]
    assert den.heights[1] == pytest.approx(np.linalg.norm((a + b) / 2 - c), rel=1e-15)


def test_three_model_hand_instance():
    # distances AB = 1, AC = 4, BC = 3; {A,B} at 1, then centroid (0.5) to C (4) at 3.5
    den = cluster_models(np.array([[0.0], [1.0], [4.0]]), ["A", "B", "C"])
    # the cluster holding the smaller leaf index is listed first
    assert den.merges == ((0, 1, 1.0), (3, 2, 3.5))
    assert den.newick() == "((A:1,B:1):2.5,C:3.5);"


def test_centroid_linkage_can_invert():
    # AB merge at 1; their centroid sits 0.9 from C, below the first height
    den = cluster_models(np.array([[0.0, 0.0], [1.0, 0.0], [0.5, 0.9]]), ["A", "B", "C"])
    assert den.heights[0] == 1.0 and den.heights[1] == pytest.approx(0.9)
    assert not den.monotone


def test_cluster_errors():
    with pytest.raises(ValueError):
        cluster_models(np.array([[1.0, 2.0]]))
    with pytest.raises(ValueError):
        cluster_models(np.array([[1.0, np.nan], [2.0, 3.0]]))


def test_cluster_comparisons_leaves(batch):
    den = cluster_comparisons(batch.comparison_list())
    assert sorted(den.leaves) == sorted(next(iter(batch.comparisons.values())).models)
    assert all(np.isfinite(den.heights))
    assert den.clusters()[-1] == frozenset(den.leaves)


def test_cluster_from_stub_comparisons():
    def stub(model, ll, cohort):
        return SimpleNamespace(model=model, ll=ll, k=2, n=100, sse=0.0, cohort_id=cohort)

    cmps = [compare([stub("gompertz", -10, c), stub("kannisto", -10.5, c), stub("weibull", -30, c)])
            for c in ("A", "B")]
    den = cluster_comparisons(cmps)
    assert den.clusters()[0] == frozenset({"Gompertz", "Kannisto"})


# ---------------------------------------------------------------- downsampling


@pytest.fixture(scope="module")
def source_cohort():
    return simulate_cohort("gompertz", GOMPERTZ, 4000, seed=8, country="FRA", sex="female", cohort_year=1872)


def test_downsample_counts(source_cohort):
    models = ["gompertz", "weibull", "kannisto"]
    res = downsample_study(source_cohort, [1.0, 0.5, 0.3, 0.1], models, seed=3, replicates=2, config=FAST, workers=1)
    assert len(res.table) == 4 * 2 * 3
    assert len(res.summary.where(metric="mean_delta_aic")) == 4 * 3


def test_downsample_full_fraction_is_identity(source_cohort):
    models = ["gompertz", "weibull", "kannisto"]
    res = downsample_study(source_cohort, [1.0], models, seed=3, config=FAST, workers=1)
    ref = batch_fit([source_cohort], models, FAST, workers=1).comparisons[source_cohort.cohort_id]
    for name, delta in ref.delta_aic().items():
        assert res.table.get(source_cohort.cohort_id, 1.0, 0, name, "delta_aic") == delta


def test_downsample_uses_thinning_streams(source_cohort):
    lines = reconstruct_lifelines(source_cohort)
    a = thin(lines, 0.5, 11)
    assert a.size < source_cohort.size and thin(lines, 0.5, 11) == a


@pytest.mark.parametrize("fractions, reps", [([0.0], 1), ([1.2], 1), ([0.5], 0)])
def test_downsample_validation(source_cohort, fractions, reps):
    with pytest.raises(ValueError):
        downsample_study(source_cohort, fractions, replicates=reps)
