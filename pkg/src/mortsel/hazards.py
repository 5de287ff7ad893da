"""The nine old-age hazard families.

Each :class:`HazardModel` bundles

* the population hazard ``mu(z)``,
* the exact integrated hazard over one year of age, which gives the
  conditional probability of death ``q(z) = 1 - exp(-int_z^{z+1} mu)``,
* the map between natural parameters and the unconstrained optimizer scale
  (``exp`` for strictly positive parameters, identity otherwise), and
* a data-driven starting-value heuristic.

Ages are the shifted index ``z`` (age 80 is ``z = 1``). All integrated
hazards are written with ``expm1``/``log1p``/``erfcx`` so they keep full
relative precision when the hazard is small or nearly flat.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf, erfcx, expit

from .cohort import CohortDataset, central_death_rates
from .quadrature import integrate_intervals
from .rng import derive_rng


class DomainError(ValueError):
    """Parameter vector outside a model's natural domain."""


class EvaluationError(ArithmeticError):
    """A hazard integral or probability could not be evaluated."""


# round-off allowance when mapping integrated hazards to probabilities
_ROUNDOFF = 1e-12
# below this |beta| the Gompertz increment uses its Taylor series
_SERIES_BETA = 1e-8
# the erf closed form of the log-quadratic integral needs gamma < -this
LOGQUAD_GAMMA_CUTOFF = 1e-8
QUAD_RTOL = 1e-10


# ---------------------------------------------------------------------------
# Hazards and one-year integrated hazards, natural parameters


def _expm1_over(b):
    """``(exp(b) - 1) / b`` with the ``b -> 0`` limit."""
    b = np.asarray(b, float)
    small = np.abs(b) < _SERIES_BETA
    safe = np.where(small, 1.0, b)
    return np.where(small, 1.0 + b / 2.0 + b * b / 6.0, np.expm1(safe) / safe)


def _log_ratio(log_d, b, z):
    """``log((d e^{b(z+1)} + 1) / (d e^{bz} + 1))`` without cancellation."""
    return np.log1p(np.expm1(b) * expit(log_d + b * z))


def gompertz_hazard(z, a, b):
    return a * np.exp(b * z)


def gompertz_H(z, a, b):
    return a * np.exp(b * z) * _expm1_over(b)


def makeham_hazard(z, a, b, c):
    return c + a * np.exp(b * z)


def makeham_H(z, a, b, c):
    return c + gompertz_H(z, a, b)


def kannisto_hazard(z, a, b):
    return expit(np.log(a) + b * z)


def kannisto_H(z, a, b):
    return _log_ratio(np.log(a), b, z) / b


def beard_hazard(z, a, b, d):
    # a e^{bz} / (1 + d e^{bz}) = (a / d) expit(log d + bz), overflow-free
    return a / d * expit(np.log(d) + b * np.asarray(z, float))


def beard_H(z, a, b, d):
    return a / (b * d) * _log_ratio(np.log(d), b, z)


def logistic_hazard(z, a, b, c, d):
    return c + beard_hazard(z, a, b, d)


def logistic_H(z, a, b, c, d):
    return c + beard_H(z, a, b, d)


def perks_hazard(z, a, b, c, d):
    s = expit(np.log(d) + b * np.asarray(z, float))
    return c * (1.0 - s) + a / d * s


def perks_H(z, a, b, c, d):
    return c + (a / d - c) / b * _log_ratio(np.log(d), b, z)


def weibull_hazard(z, a, b):
    return a * np.power(z, b - 1.0)


def weibull_H(z, a, b):
    z = np.asarray(z, float)
    return a * np.power(z, b) * np.expm1(b * np.log1p(1.0 / z)) / b


def logquad_hazard(z, a, b, c):
    z = np.asarray(z, float)
    return np.exp(a + b * z + c * z * z)


def _logquad_integrand(x, a, b, c):
    return np.exp(a + b * x + c * x * x)


def logquad_H(z, a, b, c):
    """Integrated log-quadratic hazard.

    For ``c < -LOGQUAD_GAMMA_CUTOFF`` the error-function closed form is used,
    rewritten with the scaled complementary error function on whichever side
    of the hazard's peak the interval lies; otherwise adaptive quadrature.
    """
    z = np.atleast_1d(np.asarray(z, float))
    if not c < -LOGQUAD_GAMMA_CUTOFF:
        val, _ = integrate_intervals(_logquad_integrand, z, z + 1.0, (a, b, c), rtol=QUAD_RTOL)
        return val
    s = math.sqrt(-c)
    shift = b / (2.0 * s)
    u0 = s * z - shift
    u1 = s * (z + 1.0) - shift
    lm0 = a + b * z + c * z * z
    lm1 = a + b * (z + 1.0) + c * (z + 1.0) ** 2
    pref = math.sqrt(math.pi) / (2.0 * s)
    out = np.empty_like(z)
    right = u0 >= 0
    left = u1 <= 0
    mid = ~(right | left)
    with np.errstate(over="ignore", invalid="ignore"):
        out[right] = pref * (np.exp(lm0[right]) * erfcx(u0[right]) - np.exp(lm1[right]) * erfcx(u1[right]))
        out[left] = pref * (np.exp(lm1[left]) * erfcx(-u1[left]) - np.exp(lm0[left]) * erfcx(-u0[left]))
        peak = a - b * b / (4.0 * c)
        out[mid] = pref * np.exp(peak) * (erf(u1[mid]) - erf(u0[mid]))
    return out


def lynchbrown_hazard(z, a, b, c, d):
    return a + b * np.arctan(c * (np.asarray(z, float) - d))


def _atan_antideriv(k):
    return k * np.arctan(k) - np.log(np.hypot(1.0, k))


def lynchbrown_H(z, a, b, c, d):
    k0 = c * (np.asarray(z, float) - d)
    k1 = k0 + c
    return a + b / c * (_atan_antideriv(k1) - _atan_antideriv(k0))


# ---------------------------------------------------------------------------
# Parameter gradients of the hazard, natural parameters. Each returns a list
# of arrays shaped like ``t``, one per parameter.


def _gompertz_dmu(t, a, b):
    e = np.exp(b * t)
    return [e, a * t * e]


def _makeham_dmu(t, a, b, c):
    return _gompertz_dmu(t, a, b) + [np.ones_like(t)]


def _kannisto_dmu(t, a, b):
    s = expit(np.log(a) + b * t)
    v = s * (1.0 - s)
    return [v / a, t * v]


def _beard_dmu(t, a, b, d):
    # e^{bt} / (1 + d e^{bt}) = s / d with s = expit(log d + bt)
    s = expit(np.log(d) + b * t)
    return [s / d, a * t * s * (1.0 - s) / d, -a * s * s / (d * d)]


def _logistic_dmu(t, a, b, c, d):
    da, db, dd = _beard_dmu(t, a, b, d)
    return [da, db, np.ones_like(t), dd]


def _perks_dmu(t, a, b, c, d):
    s = expit(np.log(d) + b * t)
    v = s * (1.0 - s)
    return [s / d, t * v * (a / d - c), 1.0 - s, v / d * (a / d - c) - a * s / (d * d)]


def _weibull_dmu(t, a, b):
    p = np.power(t, b - 1.0)
    return [p, a * p * np.log(t)]


def _logquad_dmu(t, a, b, c):
    mu = np.exp(a + b * t + c * t * t)
    return [mu, t * mu, t * t * mu]


def _lynchbrown_dmu(t, a, b, c, d):
    k = c * (t - d)
    w = b / (1.0 + k * k)
    return [np.ones_like(t), np.arctan(k), w * (t - d), -w * c]


# composite Gauss-Legendre rule on [0, 1]: 4 panels of 12 nodes
_GL_X, _GL_W = np.polynomial.legendre.leggauss(12)
_PANELS = 4
_U = ((np.arange(_PANELS)[:, None] + 0.5 * (_GL_X[None, :] + 1.0)) / _PANELS).ravel()
_W = np.tile(_GL_W / (2.0 * _PANELS), _PANELS)


def _integrated_gradient(dmu):
    """``d/dtheta int_z^{z+1} mu`` by differentiating under the integral."""
    def grad(z, *theta):
        t = np.asarray(z, float)[:, None] + _U[None, :]
        return np.stack([np.broadcast_to(g, t.shape) @ _W for g in dmu(t, *theta)])
    return grad


def _lynchbrown_dH(z, a, b, c, d):
    k0 = c * (np.asarray(z, float) - d)
    k1 = k0 + c
    dF = _atan_antideriv(k1) - _atan_antideriv(k0)
    at1, at0 = np.arctan(k1), np.arctan(k0)
    z = np.asarray(z, float)
    return np.stack([
        np.ones_like(z),
        dF / c,
        -b / (c * c) * dF + b / c * (at1 * (z + 1.0 - d) - at0 * (z - d)),
        -b * (at1 - at0),
    ])


# ---------------------------------------------------------------------------
# Starting-value heuristics


def _ols(x_cols, y, w=None):
    X = np.column_stack([np.ones_like(y)] + list(x_cols))
    if w is not None:
        sw = np.sqrt(w)
        X, y = X * sw[:, None], y * sw
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    return coef


def logistic_regression(z, y, w, max_iter=100, tol=1e-10):
    """Weighted binomial GLM with logit link of proportions ``y`` on ``z``.

    Fitted by iteratively reweighted least squares; ``y`` may be fractional.
    Returns ``(intercept, slope)``.
    """
    z = np.asarray(z, float)
    y = np.clip(np.asarray(y, float), 0.0, 1.0)
    w = np.asarray(w, float)
    ybar = np.clip(np.average(y, weights=w), 1e-6, 1 - 1e-6)
    coef = np.array([math.log(ybar / (1 - ybar)), 0.0])
    X = np.column_stack([np.ones_like(z), z])
    for _ in range(max_iter):
        eta = X @ coef
        p = expit(eta)
        v = np.maximum(p * (1 - p), 1e-12)
        work = eta + (y - p) / v
        new = _ols([z], work, w * v)
        if not np.all(np.isfinite(new)):
            break
        step = np.max(np.abs(new - coef))
        coef = new
        if step < tol:
            break
    return float(coef[0]), float(coef[1])


@dataclass(frozen=True)
class _RateSummary:
    z: np.ndarray
    m: np.ndarray
    w: np.ndarray
    logistic: tuple[float, float]

    def fitted(self, z):
        a, b = self.logistic
        return expit(a + b * np.asarray(z, float))

    @property
    def m_max(self):
        return float(self.m.max())

    @property
    def m_min_young(self):
        return float(self.m[: min(5, self.m.size)].min())

    def inflection(self):
        """Data age where the fitted logistic curve is nearest the rate midpoint,
        and the curve's slope there (central difference)."""
        target = 0.5 * (self.m.min() + self.m.max())
        zi = float(self.z[np.argmin(np.abs(self.fitted(self.z) - target))])
        h = 1e-3
        slope = float((self.fitted(zi + h) - self.fitted(zi - h)) / (2 * h))
        return zi, slope


def _rate_summary(d: CohortDataset) -> _RateSummary | None:
    r = central_death_rates(d)
    ok = r.defined
    if ok.sum() < 2 or not np.any(r.rates[ok] > 0):
        return None
    z, m, w = r.z[ok], r.rates[ok], r.exposure[ok]
    return _RateSummary(z, m, w, logistic_regression(z, m, w))


def _log_rate_rows(d: CohortDataset):
    r = central_death_rates(d)
    ok = r.usable
    return r.z[ok], np.log(r.rates[ok])


def _positive(x, fallback):
    return x if np.isfinite(x) and x > 0 else fallback


def _start_gompertz(d, k):
    z, y = _log_rate_rows(d)
    if z.size < k:
        return None
    a, b = _ols([z], y)
    return np.array([a, b])


MAKEHAM_LOG_GAMMA0 = -20.0


def _start_makeham(d, k):
    r = central_death_rates(d)
    g0 = math.exp(MAKEHAM_LOG_GAMMA0)
    ok = r.defined & (r.rates > g0)
    if ok.sum() < k:
        return None
    b0, b1 = _ols([r.z[ok]], np.log(r.rates[ok] - g0))
    return np.array([b0, b1, MAKEHAM_LOG_GAMMA0])


def _start_logquad(d, k):
    z, y = _log_rate_rows(d)
    if z.size < k:
        return None
    return _ols([z, z * z], y)


def _start_weibull(d, k):
    z, y = _log_rate_rows(d)
    if z.size < k:
        return None
    a, b = _ols([np.log(z)], y)
    return np.array([a, math.log(_positive(b + 1.0, 1e-3))])


def _start_kannisto(d, k):
    s = _rate_summary(d)
    if s is None or s.z.size < k:
        return None
    a, b = s.logistic
    return np.array([a, math.log(_positive(b, 1e-3))])


def _logistic_family_start(s: _RateSummary):
    zi, slope = s.inflection()
    beta = _positive(4.0 * slope / s.m_max, 0.1)
    delta = math.exp(-beta * zi)
    alpha = delta * s.m_max
    gamma = _positive(s.m_min_young - alpha / (1.0 + delta), 1e-3 * s.m_min_young if s.m_min_young > 0 else 1e-6)
    return alpha, beta, gamma, delta


def _start_beard(d, k):
    s = _rate_summary(d)
    if s is None or s.z.size < k:
        return None
    a, b, _, dl = _logistic_family_start(s)
    return np.log([a, b, dl])


def _start_logistic(d, k):
    s = _rate_summary(d)
    if s is None or s.z.size < k:
        return None
    return np.log(_logistic_family_start(s))


def _start_lynchbrown(d, k):
    s = _rate_summary(d)
    if s is None or s.z.size < k:
        return None
    beta = s.m_max / math.pi
    delta, slope = s.inflection()
    gamma = _positive(slope, 1e-2)
    floor = max(s.m_min_young, 1e-6)
    alpha = floor - beta * math.atan(gamma * (float(d.z[0]) - delta))
    return np.array([alpha, math.log(beta), math.log(gamma), delta])


# ---------------------------------------------------------------------------
# Model registry


@dataclass(frozen=True)
class HazardModel:
    """A named hazard family.

    ``positive[i]`` marks natural parameters constrained to ``(0, inf)``;
    those live on the log scale in optimizer space.
    """

    name: str
    token: str
    param_names: tuple[str, ...]
    positive: tuple[bool, ...]
    hazard_fn: Callable = field(repr=False)
    interval_fn: Callable = field(repr=False)
    start_fn: Callable = field(repr=False)
    default_natural: tuple[float, ...] = field(repr=False, default=())
    interval_grad_fn: Callable | None = field(repr=False, default=None)

    @property
    def k(self) -> int:
        return len(self.param_names)

    def __str__(self):
        return self.name

    # -- parameter scales -------------------------------------------------

    def check_natural(self, theta_nat) -> np.ndarray:
        t = np.asarray(theta_nat, float).ravel()
        if t.size != self.k:
            raise DomainError(f"{self.name} takes {self.k} parameters, got {t.size}")
        if not np.all(np.isfinite(t)):
            raise DomainError(f"{self.name} parameters must be finite, got {t.tolist()}")
        for name, pos, v in zip(self.param_names, self.positive, t):
            if pos and not v > 0:
                raise DomainError(f"{self.name} parameter {name} must be > 0, got {v}")
        return t

    def to_natural(self, theta_opt) -> np.ndarray:
        t = np.asarray(theta_opt, float).ravel()
        if t.size != self.k:
            raise DomainError(f"{self.name} takes {self.k} parameters, got {t.size}")
        return np.where(self.positive, np.exp(t), t)

    def from_natural(self, theta_nat) -> np.ndarray:
        t = self.check_natural(theta_nat)
        return np.where(self.positive, np.log(np.where(self.positive, t, 1.0)), t)

    def as_dict(self, theta_nat) -> dict:
        return {n: float(v) for n, v in zip(self.param_names, self.check_natural(theta_nat))}

    def from_dict(self, params: dict) -> np.ndarray:
        missing = set(self.param_names) - set(params)
        extra = set(params) - set(self.param_names)
        if missing or extra:
            raise DomainError(
                f"{self.name} expects parameters {list(self.param_names)}; "
                f"missing {sorted(missing)}, unexpected {sorted(extra)}"
            )
        return self.check_natural([params[n] for n in self.param_names])

    # -- hazard, probabilities, survival -----------------------------------

    def hazard(self, theta_nat, z):
        t = self.check_natural(theta_nat)
        return self.hazard_fn(np.asarray(z, float), *t)

    def interval_hazard(self, theta_nat, z) -> np.ndarray:
        """``int_z^{z+1} mu(x) dx`` for each ``z`` (no domain checks)."""
        z = np.atleast_1d(np.asarray(z, float))
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            return np.asarray(self.interval_fn(z, *np.asarray(theta_nat, float)), float)

    def interval_hazard_grad(self, theta_nat, z) -> np.ndarray:
        """Partial derivatives of :meth:`interval_hazard` with respect to the
        natural parameters, shape ``(k, len(z))`` (no domain checks)."""
        z = np.atleast_1d(np.asarray(z, float))
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            return np.asarray(self.interval_grad_fn(z, *np.asarray(theta_nat, float)), float)

    def death_prob(self, theta_nat, z) -> np.ndarray:
        """Conditional probability of dying between ``z`` and ``z + 1``.

        Raises
        ------
        EvaluationError
            If the integrated hazard is not finite or is negative beyond
            round-off (possible for Lynch-Brown with a negative hazard).
        """
        t = self.check_natural(theta_nat)
        scalar = np.ndim(z) == 0
        H = self.interval_hazard(t, z)
        bad = ~np.isfinite(H)
        if np.any(bad):
            raise EvaluationError(f"{self.name}: non-finite integrated hazard at z={np.atleast_1d(z)[bad].tolist()}")
        q = -np.expm1(-H)
        if np.any(q < -_ROUNDOFF):
            raise EvaluationError(f"{self.name}: negative death probability (hazard integral {H.min()!r})")
        q = np.clip(q, 0.0, 1.0)
        return float(q[0]) if scalar else q

    def survival_curve(self, theta_nat, z) -> np.ndarray:
        """``S`` at ``z[0], ..., z[-1] + 1`` with ``S(z[0]) = 1``."""
        q = np.atleast_1d(self.death_prob(theta_nat, z))
        return np.concatenate([[1.0], np.cumprod(1.0 - q)])

    # -- starting values ----------------------------------------------------

    def heuristic_start(self, d: CohortDataset) -> np.ndarray:
        """Optimizer-scale start estimated from central death rates.

        Falls back to ``default_natural`` when the rates are degenerate or the
        estimate is not finite.
        """
        try:
            with np.errstate(all="ignore"):
                t = self.start_fn(d, self.k)
        except (np.linalg.LinAlgError, ValueError, OverflowError):
            t = None
        if t is None or not np.all(np.isfinite(t)):
            return self.default_start()
        return np.asarray(t, float)

    def default_start(self) -> np.ndarray:
        return self.from_natural(self.default_natural)

    def random_starts(self, theta_heuristic, n: int, seed: int) -> list[np.ndarray]:
        """``n`` starts uniform in ``theta_h +/- max(1, |theta_h|)`` per coordinate.

        Start ``i`` is drawn from its own stream keyed by ``(seed, model, i)``.
        """
        th = np.asarray(theta_heuristic, float)
        width = np.maximum(1.0, np.abs(th))
        return [
            derive_rng(seed, "start", self.token, i).uniform(th - width, th + width)
            for i in range(int(n))
        ]


def _model(name, token, params, positive, hz, H, start, default, dH):
    return HazardModel(name, token, tuple(params), tuple(positive), hz, H, start, tuple(default), dH)


MODELS: tuple[HazardModel, ...] = (
    _model("Gompertz", "gompertz", "alpha beta".split(), (True, False),
           gompertz_hazard, gompertz_H, _start_gompertz, (0.05, 0.1),
           _integrated_gradient(_gompertz_dmu)),
    _model("Kannisto", "kannisto", "alpha beta".split(), (True, True),
           kannisto_hazard, kannisto_H, _start_kannisto, (0.05, 0.1),
           _integrated_gradient(_kannisto_dmu)),
    _model("Weibull", "weibull", "alpha beta".split(), (True, True),
           weibull_hazard, weibull_H, _start_weibull, (0.05, 1.5),
           _integrated_gradient(_weibull_dmu)),
    _model("Makeham", "makeham", "alpha beta gamma".split(), (True, False, True),
           makeham_hazard, makeham_H, _start_makeham, (0.05, 0.1, 1e-6),
           _integrated_gradient(_makeham_dmu)),
    _model("Beard", "beard", "alpha beta delta".split(), (True, True, True),
           beard_hazard, beard_H, _start_beard, (0.05, 0.1, 0.01),
           _integrated_gradient(_beard_dmu)),
    _model("Log-Quadratic", "logquad", "alpha beta gamma".split(), (False, False, False),
           logquad_hazard, logquad_H, _start_logquad, (-3.0, 0.1, -1e-3),
           _integrated_gradient(_logquad_dmu)),
    _model("Logistic", "logistic", "alpha beta gamma delta".split(), (True, True, True, True),
           logistic_hazard, logistic_H, _start_logistic, (0.05, 0.1, 1e-3, 0.01),
           _integrated_gradient(_logistic_dmu)),
    _model("Perks", "perks", "alpha beta gamma delta".split(), (True, True, True, True),
           perks_hazard, perks_H, _start_logistic, (0.05, 0.1, 1e-3, 0.01),
           _integrated_gradient(_perks_dmu)),
    _model("Lynch-Brown", "lynchbrown", "alpha beta gamma delta".split(), (False, True, True, False),
           lynchbrown_hazard, lynchbrown_H, _start_lynchbrown, (0.3, 0.2, 0.1, 15.0),
           _lynchbrown_dH),
)

MODEL_TOKENS: tuple[str, ...] = tuple(m.token for m in MODELS)
_BY_KEY = {m.token: m for m in MODELS}
_BY_KEY.update({m.name.lower(): m for m in MODELS})


def get_model(name: str | HazardModel) -> HazardModel:
    """Look a model up by CLI token (``logquad``) or display name."""
    if isinstance(name, HazardModel):
        return name
    key = str(name).strip().lower()
    if key not in _BY_KEY:
        raise KeyError(f"unknown model {name!r}; valid names: {', '.join(MODEL_TOKENS)}")
    return _BY_KEY[key]


def resolve_models(names: Sequence[str] | str | None) -> list[HazardModel]:
    """Parse a model list; ``None`` or ``"all"`` selects all nine."""
    if names is None:
        return list(MODELS)
    if isinstance(names, str):
        names = [n for n in names.split(",") if n.strip()]
    if len(names) == 1 and str(names[0]).strip().lower() == "all":
        return list(MODELS)
    out = [get_model(n) for n in names]
    return sorted(set(out), key=MODELS.index)


# module-level aliases mirroring the method API


def hazard(model, theta_nat, z):
    return get_model(model).hazard(theta_nat, z)


def death_prob(model, theta_nat, z):
    return get_model(model).death_prob(theta_nat, z)


def survival_curve(model, theta_nat, z):
    return get_model(model).survival_curve(theta_nat, z)


def to_natural(model, theta_opt):
    return get_model(model).to_natural(theta_opt)


def from_natural(model, theta_nat):
    return get_model(model).from_natural(theta_nat)


def heuristic_start(model, d):
    return get_model(model).heuristic_start(d)


def random_starts(model, theta_heuristic, n, seed):
    return get_model(model).random_starts(theta_heuristic, n, seed)


def params_to_json(model, theta_nat) -> str:
    return json.dumps(get_model(model).as_dict(theta_nat))


def params_from_json(model, text: str) -> np.ndarray:
    return get_model(model).from_dict(json.loads(text))
