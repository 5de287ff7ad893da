import json
import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import erf

from mortsel import hazards as hz
from mortsel.hazards import MODELS, MODEL_TOKENS, DomainError, EvaluationError, get_model, resolve_models

from conftest import make_cohort

# natural parameters well inside each domain, used by several checks
TYPICAL = {
    "gompertz": (0.05, 0.11),
    "kannisto": (0.05, 0.12),
    "weibull": (0.01, 2.2),
    "makeham": (0.04, 0.11, 0.01),
    "beard": (0.05, 0.12, 0.02),
    "logquad": (-3.0, 0.12, -1e-3),
    "logistic": (0.04, 0.13, 0.01, 0.03),
    "perks": (0.04, 0.13, 0.01, 0.03),
    "lynchbrown": (0.3, 0.15, 0.12, 20.0),
}


def mp_q(model, theta, z):
    """Death probability by mpmath quadrature of the hazard."""
    token = get_model(model).token
    mp.mp.dps = 30
    return 1 - mp.exp(-mp.quad(lambda x: _mp_hazard(token, theta, x), [z, z + 1]))


def _mp_hazard(token, t, x):
    t = [mp.mpf(v) for v in t]
    e = lambda b: mp.exp(b * x)
    if token == "gompertz":
        return t[0] * e(t[1])
    if token == "makeham":
        return t[2] + t[0] * e(t[1])
    if token == "kannisto":
        return t[0] * e(t[1]) / (1 + t[0] * e(t[1]))
    if token == "beard":
        return t[0] * e(t[1]) / (1 + t[2] * e(t[1]))
    if token == "logistic":
        return t[2] + t[0] * e(t[1]) / (1 + t[3] * e(t[1]))
    if token == "perks":
        return (t[2] + t[0] * e(t[1])) / (1 + t[3] * e(t[1]))
    if token == "weibull":
        return t[0] * x ** (t[1] - 1)
    if token == "logquad":
        return mp.exp(t[0] + t[1] * x + t[2] * x * x)
    if token == "lynchbrown":
        return t[0] + t[1] * mp.atan(t[2] * (x - t[3]))
    raise KeyError(token)


# ---------------------------------------------------------------- registry


def test_registry_order_and_sizes():
    assert MODEL_TOKENS == ("gompertz", "kannisto", "weibull", "makeham", "beard", "logquad",
                            "logistic", "perks", "lynchbrown")
    assert [m.k for m in MODELS] == [2, 2, 2, 3, 3, 3, 4, 4, 4]


def test_lookup_by_token_or_name():
    assert get_model("Log-Quadratic") is get_model("logquad")
    with pytest.raises(KeyError, match="valid names: gompertz"):
        get_model("gompert")
    assert [m.token for m in resolve_models("perks,gompertz")] == ["gompertz", "perks"]
    assert len(resolve_models("all")) == 9


# ---------------------------------------------------------------- hazards


def test_hazard_limits():
    z = np.arange(1.0, 26.0)
    assert np.all(get_model("gompertz").hazard((0.1, 0.0), z) == 0.1)
    assert np.allclose(get_model("weibull").hazard((0.3, 1.0), z), 0.3, rtol=0, atol=0)
    assert get_model("kannisto").hazard((1e300, 0.1), 5.0) == pytest.approx(1.0, abs=1e-12)


def test_logistic_upper_asymptote():
    a, b, g, d = TYPICAL["logistic"]
    assert get_model("logistic").hazard((a, b, g, d), 1e6) == pytest.approx(a / d + g, rel=1e-6)


def test_nesting_identities_pointwise():
    z = np.linspace(1, 25, 49)
    gm, mk, bd, lg, kn, lq = (get_model(t) for t in ("gompertz", "makeham", "beard", "logistic",
                                                      "kannisto", "logquad"))
    a, b = 0.05, 0.11
    assert np.allclose(mk.hazard_fn(z, a, b, 0.0), gm.hazard(( a, b), z), rtol=1e-12, atol=0)
    assert np.allclose(lg.hazard_fn(z, a, b, 0.0, 0.02), bd.hazard((a, b, 0.02), z), rtol=1e-12, atol=0)
    assert np.allclose(bd.hazard((a, b, a), z), kn.hazard((a, b), z), rtol=1e-12, atol=0)
    assert np.allclose(lq.hazard((math.log(a), b, 0.0), z), gm.hazard((a, b), z), rtol=1e-12, atol=0)
    # the same identities hold for the integrated forms
    assert np.allclose(mk.interval_fn(z, a, b, 0.0), gm.interval_hazard((a, b), z), rtol=1e-12, atol=0)
    assert np.allclose(lg.interval_fn(z, a, b, 0.0, 0.02), bd.interval_hazard((a, b, 0.02), z), rtol=1e-12, atol=0)
    assert np.allclose(bd.interval_hazard((a, b, a), z), kn.interval_hazard((a, b), z), rtol=1e-12, atol=0)


# ---------------------------------------------------------------- death probabilities


def test_gompertz_constant_hazard_limit():
    # oracle: 1 - exp(-0.01)
    assert get_model("gompertz").death_prob((0.01, 0.0), 3) == pytest.approx(0.009950166250831946, rel=1e-14)


def test_gompertz_example():
    # oracle: mpmath quadrature of the hazard
    q = get_model("gompertz").death_prob((0.05, 0.1), 1)
    assert q == pytest.approx(0.0564594341651056, rel=1e-13)
    assert round(q, 6) == 0.056459


def test_kannisto_example():
    # oracle: mpmath quadrature and the closed form agree on 0.30752382...
    q = get_model("kannisto").death_prob((0.5, 0.1), 1)
    assert q == pytest.approx(0.3075238204245229, rel=1e-13)


@pytest.mark.parametrize("token", MODEL_TOKENS)
def test_closed_form_matches_mpmath(token):
    theta = TYPICAL[token]
    for z in (1, 7, 25):
        ref = float(mp_q(token, theta, z))
        assert get_model(token).death_prob(theta, z) == pytest.approx(ref, rel=1e-12)


@pytest.mark.parametrize("beta", [1e-9, -1e-9, 5e-9])
def test_small_beta_series_continuity(beta):
    z = np.arange(1.0, 26.0)
    for token, theta in (("gompertz", (0.05, beta)), ("makeham", (0.05, beta, 0.01))):
        m = get_model(token)
        series = m.death_prob(theta, z)
        exact = np.array([float(mp_q(token, theta, zz)) for zz in z[::6]])
        assert np.allclose(series[::6], exact, rtol=1e-10, atol=0)


@pytest.mark.parametrize("gamma", [-1e-3, -1e-7, -1.0001e-8, -1e-8, -1e-9, 0.0, 1e-4])
def test_logquad_near_cutoff(gamma):
    theta = (-3.0, 0.12, gamma)
    for z in (1, 13, 25):
        ref = float(mp_q("logquad", theta, z))
        assert get_model("logquad").death_prob(theta, z) == pytest.approx(ref, rel=1e-11)


def test_logquad_interval_straddling_peak():
    # peak of a + b z + c z^2 at z = 10.5, inside [10, 11]
    theta = (-2.0, 0.21, -0.01)
    ref = float(mp_q("logquad", theta, 10))
    assert get_model("logquad").death_prob(theta, 10) == pytest.approx(ref, rel=1e-13)


def test_erf_contract():
    x = np.array([0.3, 1.7, 4.0])
    assert erf(0.0) == 0.0 and erf(np.inf) == 1.0
    assert np.array_equal(erf(-x), -erf(x))
    for v in x:
        assert float(erf(v)) == pytest.approx(float(mp.erf(v)), rel=1e-14)


def test_death_prob_errors():
    m = get_model("lynchbrown")
    with pytest.raises(EvaluationError, match="negative death probability"):
        m.death_prob((-1.0, 0.1, 0.1, 20.0), 1)
    with pytest.raises(DomainError):
        get_model("gompertz").death_prob((-0.1, 0.1), 1)
    with pytest.raises(DomainError, match="takes 2 parameters"):
        get_model("gompertz").death_prob((0.1,), 1)
    with pytest.raises(EvaluationError, match="non-finite"):
        get_model("gompertz").death_prob((1.0, 800.0), 1)


def test_scalar_and_vector_shapes():
    m = get_model("beard")
    assert isinstance(m.death_prob(TYPICAL["beard"], 3), float)
    assert m.death_prob(TYPICAL["beard"], [1, 2, 3]).shape == (3,)


# ---------------------------------------------------------------- survival


def test_survival_examples():
    m = get_model("gompertz")
    assert np.all(m.survival_curve((1e-300, 0.0), np.arange(1.0, 6.0)) == 1.0)
    q_half = math.log(2.0)  # constant hazard with q = 1/2
    s = m.survival_curve((q_half, 0.0), np.arange(1.0, 4.0))
    assert np.allclose(s, [1, 0.5, 0.25, 0.125], rtol=1e-15)


@pytest.mark.parametrize("token", MODEL_TOKENS)
def test_survival_non_increasing(token):
    s = get_model(token).survival_curve(TYPICAL[token], np.arange(1.0, 26.0))
    assert s[0] == 1.0 and np.all(np.diff(s) <= 0) and np.all((s >= 0) & (s <= 1))


# ---------------------------------------------------------------- parameter maps


def test_parameter_map_examples():
    assert np.allclose(get_model("gompertz").to_natural((0.0, 0.1)), (1.0, 0.1), rtol=0, atol=0)
    lb = get_model("lynchbrown").to_natural((0.2, 0.0, 0.0, 15.0))
    assert np.array_equal(lb, [0.2, 1.0, 1.0, 15.0])


@pytest.mark.parametrize("token", MODEL_TOKENS)
@given(data=st.data())
@settings(max_examples=50, deadline=None)
def test_parameter_round_trip(token, data):
    m = get_model(token)
    x = np.array(data.draw(st.lists(st.floats(-20, 20), min_size=m.k, max_size=m.k)))
    assert np.allclose(m.from_natural(m.to_natural(x)), x, rtol=1e-12, atol=1e-12)


def test_from_natural_domain_error():
    with pytest.raises(DomainError, match="beta must be > 0"):
        get_model("kannisto").from_natural((0.1, 0.0))


def test_params_json_round_trip():
    text = hz.params_to_json("perks", TYPICAL["perks"])
    assert json.loads(text) == {"alpha": 0.04, "beta": 0.13, "gamma": 0.01, "delta": 0.03}
    assert np.array_equal(hz.params_from_json("perks", text), TYPICAL["perks"])
    with pytest.raises(DomainError, match="missing"):
        hz.params_from_json("perks", '{"alpha": 1}')


# ---------------------------------------------------------------- interval-hazard gradients


@pytest.mark.parametrize("token", MODEL_TOKENS)
def test_interval_hazard_gradient_matches_mpmath(token):
    m = get_model(token)
    theta = np.array(TYPICAL[token], float)
    z = np.array([1.0, 12.0, 25.0])
    g = m.interval_hazard_grad(theta, z)
    mp.mp.dps = 30
    for i in range(m.k):
        for j, zz in enumerate(z):
            def H(v, i=i, zz=zz):
                t = list(theta)
                t[i] = v
                return mp.quad(lambda x: _mp_hazard(token, t, x), [zz, zz + 1])
            ref = float(mp.diff(H, mp.mpf(theta[i])))
            assert g[i, j] == pytest.approx(ref, rel=1e-9, abs=1e-15)


# ---------------------------------------------------------------- starting values


def _rates_cohort(log_m):
    """Cohort whose central death rates equal exp(log_m) (large N, rounded)."""
    m = np.exp(log_m)
    q = m / (1 + 0.5 * m)
    n = [10**9]
    d = []
    for qi in q:
        d.append(int(round(n[-1] * qi)))
        n.append(n[-1] - d[-1])
    return make_cohort(n[:-1], d)


def test_gompertz_start_recovers_line():
    z = np.arange(1.0, 26.0)
    ds = _rates_cohort(-3.0 + 0.1 * z)
    a, b = get_model("gompertz").heuristic_start(ds)
    assert a == pytest.approx(-3.0, abs=1e-6) and b == pytest.approx(0.1, abs=1e-7)


def test_logquad_start_recovers_quadratic():
    z = np.arange(1.0, 26.0)
    ds = _rates_cohort(-3.0 + 0.12 * z - 0.002 * z * z)
    coef = get_model("logquad").heuristic_start(ds)
    assert np.allclose(coef, [-3.0, 0.12, -0.002], atol=1e-6)


def test_weibull_start_on_constant_rates():
    ds = _rates_cohort(np.full(25, math.log(0.2)))
    a, log_b = get_model("weibull").heuristic_start(ds)
    assert math.exp(log_b) == pytest.approx(1.0, abs=1e-6)
    assert math.exp(a) == pytest.approx(0.2, rel=1e-6)


def test_degenerate_rates_fall_back_to_default():
    ds = make_cohort([100] * 5, [0] * 5)
    for m in MODELS:
        assert np.array_equal(m.heuristic_start(ds), m.default_start())


@pytest.mark.parametrize("token", MODEL_TOKENS)
def test_heuristic_start_finite_and_positive_hazard(token):
    m = get_model(token)
    z = np.arange(1.0, 26.0)
    ds = _rates_cohort(np.log(0.05) + 0.11 * z - 0.001 * z * z)
    x0 = m.heuristic_start(ds)
    assert np.all(np.isfinite(x0))
    assert np.all(m.hazard(m.to_natural(x0), z) > 0)


def test_random_starts_box_and_determinism():
    m = get_model("logistic")
    th = np.array([-3.0, 0.5, -6.0, 0.0])
    starts = m.random_starts(th, 10, seed=5)
    assert len(starts) == 10
    w = np.maximum(1.0, np.abs(th))
    assert all(np.all((s >= th - w) & (s <= th + w)) for s in starts)
    again = m.random_starts(th, 10, seed=5)
    assert all(np.array_equal(a, b) for a, b in zip(starts, again))
    assert m.random_starts(th, 0, seed=5) == []
