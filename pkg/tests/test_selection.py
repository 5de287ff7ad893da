import itertools
import json
import math
from types import SimpleNamespace

import pytest

from mortsel.hazards import MODELS
from mortsel.selection import (
    CSV_COLUMNS,
    ComparisonError,
    Support,
    aic,
    bic,
    compare,
    delta_matrix,
    support_category,
)


def stub(model, ll, k=2, n=8192, sse=0.0, cohort="DNK_male_1895"):
    return SimpleNamespace(model=model, ll=ll, k=k, n=n, sse=sse, cohort_id=cohort)


def stub_from_aic(model, a, k):
    return stub(model, -(a - 2 * k) / 2, k=k)


# ---------------------------------------------------------------- criteria


def test_aic_example():
    assert aic(stub("kannisto", -29092.2)) == pytest.approx(58188.4, abs=1e-9)


def test_bic_example():
    value = bic(stub("kannisto", -29092.2), 8192)
    assert value == pytest.approx(58184.4 + 2 * math.log(8192), abs=1e-9)
    assert round(value, 2) == 58202.42


def test_aic_without_parameters():
    assert aic(stub("gompertz", -12.5, k=0)) == 25.0


@pytest.mark.parametrize("n", [0, -3])
def test_bic_rejects_non_positive_n(n):
    with pytest.raises(ValueError):
        bic(stub("gompertz", -1.0), n)


def test_criteria_need_finite_ll():
    with pytest.raises(ValueError):
        aic(stub("gompertz", -math.inf))


# ---------------------------------------------------------------- support


@pytest.mark.parametrize("delta, expected", [
    (0.0, Support.SUBSTANTIAL),
    (2.0, Support.SUBSTANTIAL),
    (2.0000001, Support.INTERMEDIATE),
    (3.7, Support.INTERMEDIATE),
    (10.0, Support.INTERMEDIATE),
    (10.0000001, Support.NONE),
    (125.0, Support.NONE),
    (math.inf, Support.NONE),
])
def test_support_categories(delta, expected):
    assert support_category(delta) is expected


@pytest.mark.parametrize("delta", [-1e-12, -1.0, math.nan])
def test_support_rejects_negative(delta):
    with pytest.raises(ValueError):
        support_category(delta)


# ---------------------------------------------------------------- compare


def test_compare_two_models():
    cmp = compare([stub_from_aic("kannisto", 58188.43, 2), stub_from_aic("beard", 58190.12, 3)])
    d = cmp.delta_aic()
    assert d["Kannisto"] == 0.0
    assert d["Beard"] == pytest.approx(1.69, abs=1e-9)
    assert cmp.best_model == "Kannisto" and not cmp.tie_flagged
    assert cmp.row("beard").support is Support.SUBSTANTIAL


def _nine(seed_lls):
    return [stub(m.token, ll, k=m.k, sse=float(i * 7 % 5)) for i, (m, ll) in enumerate(zip(MODELS, seed_lls))]


LLS = [-100.0, -98.5, -97.0, -99.2, -96.1, -101.0, -95.9, -96.0, -120.0]


def test_compare_invariants():
    cmp = compare(_nine(LLS))
    rows = cmp.rows
    assert min(r.delta_aic for r in rows) == 0.0
    assert sum(r.delta_aic == 0.0 for r in rows) == 1
    for field in ("aic_rank", "bic_rank", "sse_rank"):
        assert sorted(getattr(r, field) for r in rows) == list(range(1, 10))
    for r in rows:
        assert (r.aic_rank == 1) == (r.delta_aic == 0.0)
        assert r.support is support_category(r.delta_aic)
        assert r.bic - r.aic == pytest.approx((math.log(8192) - 2) * r.k, rel=1e-12)


def test_compare_is_permutation_invariant():
    fits = _nine(LLS)
    ref = compare(fits).to_json()
    for perm in itertools.islice(itertools.permutations(fits), 0, 5000, 97):
        assert compare(perm).to_json() == ref


def test_delta_invariant_to_constant_shift():
    a = compare(_nine(LLS))
    b = compare(_nine([v - 1234.5 for v in LLS]))
    for ra, rb in zip(a.rows, b.rows):
        assert ra.delta_aic == pytest.approx(rb.delta_aic, abs=1e-9)
        assert ra.aic_rank == rb.aic_rank


def test_ties_are_broken_by_registry_order_and_flagged():
    # Gompertz and Makeham with identical AIC
    fits = [stub("makeham", -10.0, k=2), stub("gompertz", -10.0, k=2), stub("weibull", -20.0, k=2)]
    cmp = compare(fits)
    assert cmp.tie_flagged and cmp.ties == (("Gompertz", "Makeham"),)
    assert cmp.row("gompertz").aic_rank == 1 and cmp.row("makeham").aic_rank == 2
    assert cmp.best_model == "Gompertz"


@pytest.mark.parametrize("fits", [
    [stub("gompertz", -1.0)],
    [stub("gompertz", -1.0), stub("gompertz", -2.0)],
    [stub("gompertz", -1.0), stub("makeham", -2.0, cohort="other")],
])
def test_compare_errors(fits):
    with pytest.raises(ComparisonError):
        compare(fits)


def test_compare_outputs():
    cmp = compare(_nine(LLS), metadata={"sex": "male"})
    lines = cmp.to_csv().splitlines()
    assert lines[0].split(",") == list(CSV_COLUMNS)
    assert len(lines) == 10
    data = json.loads(cmp.to_json())
    assert data["cohort"] == "DNK_male_1895" and len(data["models"]) == 9
    assert cmp.metadata == {"sex": "male"}


def test_explicit_n_overrides_fit_size():
    cmp = compare([stub("gompertz", -10.0), stub("weibull", -11.0)], n=100)
    assert cmp.n == 100 and cmp.row("gompertz").bic == pytest.approx(20 + 2 * math.log(100))


def test_delta_matrix_layout():
    a = compare([stub("gompertz", -10.0), stub("weibull", -11.0)])
    b = compare([stub("gompertz", -12.0, cohort="B"), stub("kannisto", -11.0, cohort="B")])
    names, cohorts, mat = delta_matrix([a, b])
    assert names == ["Gompertz", "Kannisto", "Weibull"] and cohorts == ["DNK_male_1895", "B"]
    assert mat[0, 0] == 0.0 and mat[2, 0] == 2.0 and math.isnan(mat[1, 0])
    assert mat[0, 1] == 2.0 and mat[1, 1] == 0.0
