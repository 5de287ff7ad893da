"""Binomial likelihood and multi-start maximum-likelihood fitting.

Deaths at each age are modelled as ``D ~ Binomial(N, q(z; theta))``. A fit
maximizes the log-likelihood with BFGS from one heuristic start plus a number
of random starts and keeps the start with the highest final value.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.special import gammaln

from .cohort import CohortDataset
from .hazards import DomainError, EvaluationError, HazardModel, get_model
from .optim import EPS, bfgs, central_gradient, newton_refine

LOG_FLOOR = math.log(1e-300)


class FitError(RuntimeError):
    """Every start of a fit failed to produce a finite likelihood."""

    def __init__(self, message, starts=()):
        super().__init__(message)
        self.starts = list(starts)


@dataclass(frozen=True)
class LogLikelihood:
    total: float
    includes_binomial_constant: bool

    @property
    def finite(self) -> bool:
        return bool(np.isfinite(self.total))

    def __float__(self):
        return float(self.total)


@dataclass(frozen=True)
class FitConfig:
    """Optimizer settings; ``n_random_starts`` is in addition to the heuristic start.

    ``gradient="numeric"`` switches BFGS to central differences. The analytic
    default matters near boundary optima (a nested model's limit), where
    finite-difference noise stalls the line search before the likelihood
    has converged to within 1e-6. ``newton_refine`` polishes every BFGS
    result with modified Newton steps for the same reason.
    """

    n_random_starts: int = 10
    max_iterations: int = 500
    gradient_tolerance: float = 1e-6
    relative_ll_tolerance: float = 1e-10
    seed: int = 0
    include_binomial_constant: bool = True
    gradient: str = "analytic"
    newton_refine: bool = True

    def __post_init__(self):
        if self.gradient not in ("analytic", "numeric"):
            raise ValueError("gradient must be 'analytic' or 'numeric'")
        if self.n_random_starts < 0:
            raise ValueError("n_random_starts must be >= 0")
        if self.max_iterations <= 0:
            raise ValueError("max_iterations must be positive")
        if not (self.gradient_tolerance > 0 and self.relative_ll_tolerance > 0):
            raise ValueError("tolerances must be positive")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def replace(self, **changes) -> "FitConfig":
        return FitConfig(**{**asdict(self), **changes})


@dataclass(frozen=True)
class StartRecord:
    start: tuple[float, ...]
    final: tuple[float, ...]
    converged: bool
    loglik: float
    iterations: int
    message: str


@dataclass(frozen=True)
class FitResult:
    model: str
    param_names: tuple[str, ...]
    theta_opt: np.ndarray
    theta_nat: np.ndarray
    loglik: LogLikelihood
    k: int
    n: int
    aic: float
    bic: float
    sse: float
    predicted_deaths: np.ndarray
    starts: tuple[StartRecord, ...]
    best_start_index: int
    cohort_id: str = ""

    @property
    def ll(self) -> float:
        return self.loglik.total

    @property
    def converged(self) -> bool:
        return self.starts[self.best_start_index].converged

    @property
    def params(self) -> dict:
        return {n: float(v) for n, v in zip(self.param_names, self.theta_nat)}

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "cohort": self.cohort_id,
            "parameters": self.params,
            "parameters_optimizer_scale": [float(v) for v in self.theta_opt],
            "k": self.k,
            "n": self.n,
            "loglik": float(self.ll),
            "includes_binomial_constant": self.loglik.includes_binomial_constant,
            "aic": float(self.aic),
            "bic": float(self.bic),
            "sse": float(self.sse),
            "predicted_deaths": [float(v) for v in self.predicted_deaths],
            "best_start_index": self.best_start_index,
            "starts": [
                {
                    "start": list(s.start),
                    "final": list(s.final),
                    "converged": s.converged,
                    "loglik": s.loglik if np.isfinite(s.loglik) else None,
                    "iterations": s.iterations,
                    "message": s.message,
                }
                for s in self.starts
            ],
        }

    def to_json(self, indent=2) -> str:
        return json.dumps(self.to_dict(), indent=indent)


# ---------------------------------------------------------------------------
# Likelihood pieces


def binomial_constant(d: CohortDataset) -> float:
    """``sum log C(N, D)``, the parameter-free part of the log-likelihood."""
    n = d.survivors.astype(float)
    k = d.deaths.astype(float)
    return float(np.sum(gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)))


def _log_q_terms(H):
    """``log q`` and ``log(1 - q)`` from integrated hazards."""
    with np.errstate(divide="ignore"):
        return np.log(-np.expm1(-H)), -H


def log_likelihood(model, theta_nat, d: CohortDataset, include_constant=True) -> LogLikelihood:
    """Exact binomial log-likelihood at natural parameters ``theta_nat``.

    Returns ``-inf`` when an age with deaths has ``q = 0`` or an age with
    survivors has ``q = 1``.
    """
    m = get_model(model)
    t = m.check_natural(theta_nat)
    H = m.interval_hazard(t, d.z)
    if np.any(np.isnan(H)) or np.any(H < -1e-12):
        raise EvaluationError(f"{m.name}: invalid integrated hazard")
    H = np.maximum(H, 0.0)
    log_q, log_p = _log_q_terms(H)
    n = d.survivors.astype(float)
    k = d.deaths.astype(float)
    with np.errstate(invalid="ignore"):
        terms = np.where(k > 0, k * log_q, 0.0) + np.where(n - k > 0, (n - k) * log_p, 0.0)
    total = float(np.sum(terms))
    if include_constant:
        total += binomial_constant(d)
    return LogLikelihood(total, bool(include_constant))


class _NegLogLik:
    """Objective in optimizer space with logs floored at 1e-300.

    The optimizer sees ``-(ll - ll_saturated)``; subtracting the saturated
    log-likelihood (``q = D / N``) age by age keeps every summand small, so
    rounding noise stays far below the likelihood differences that matter
    near a boundary optimum. ``offset`` restores the full ``-ll``.
    """

    def __init__(self, m: HazardModel, d: CohortDataset, include_constant=True):
        self.m = m
        self.z = d.z
        self.n = d.survivors.astype(float)
        self.k = d.deaths.astype(float)
        self.live = self.n - self.k
        with np.errstate(divide="ignore", invalid="ignore"):
            q_hat = np.where(self.n > 0, self.k / np.where(self.n > 0, self.n, 1.0), 0.0)
            self.log_q_hat = np.where(self.k > 0, np.log(q_hat), 0.0)
            self.log_p_hat = np.where(self.live > 0, np.log1p(-q_hat), 0.0)
        saturated = float(self.k @ self.log_q_hat + self.live @ self.log_p_hat)
        const = binomial_constant(d) if include_constant else 0.0
        self.offset = -(const + saturated)
        # summands carry relative rounding error, so the noise tracks their size
        size = float(self.k @ np.abs(self.log_q_hat) + self.live @ np.abs(self.log_p_hat))
        self.noise = 64 * EPS * max(1.0, size)

    def centered(self, theta_opt) -> float:
        """``ll - ll_saturated`` (non-positive up to rounding)."""
        with np.errstate(all="ignore"):
            t = self.m.to_natural(theta_opt)
            if not np.all(np.isfinite(t)):
                return -np.inf
            H = self.m.interval_fn(self.z, *t)
            if not np.all(np.isfinite(H)):
                # +inf hazard integrals are admissible (q = 1) only where nobody survives
                if np.any(np.isnan(H)) or np.any(np.isinf(H) & (self.live > 0)):
                    return -np.inf
            if np.any(H < -1e-12):
                return -np.inf
            H = np.maximum(H, 0.0)
            log_q = np.maximum(np.log(-np.expm1(-H)), LOG_FLOOR)
            log_p = np.maximum(-H, LOG_FLOOR)
            return float(self.k @ (log_q - self.log_q_hat) + self.live @ (log_p - self.log_p_hat))

    def ll(self, theta_opt) -> float:
        return self.centered(theta_opt) - self.offset

    def gradient(self, theta_opt, f=None) -> np.ndarray:
        """Analytic gradient of the objective in optimizer space.

        ``dll/dH = D / expm1(H) - (N - D)`` per age, chained through the
        parameter partials of the integrated hazard and the log transform.
        """
        with np.errstate(all="ignore"):
            t = self.m.to_natural(theta_opt)
            H = self.m.interval_fn(self.z, *t)
            dH = self.m.interval_grad_fn(self.z, *t)
            w = np.where(self.k > 0, self.k / np.expm1(H), 0.0) - np.where(self.live > 0, self.live, 0.0)
            # ages where q = 1 and nobody survives contribute nothing
            w = np.where(np.isinf(H) & (self.live == 0), 0.0, w)
            dH = np.where(w[None, :] == 0.0, 0.0, dH)
            g = -(dH @ w)
            return g * np.where(self.m.positive, t, 1.0)

    def __call__(self, theta_opt) -> float:
        return -self.centered(theta_opt)


def neg_ll_gradient(model, theta_opt, d: CohortDataset, include_constant=True,
                    method="numeric") -> np.ndarray:
    """Gradient of ``-ll`` in optimizer space.

    By default central differences with steps ``eps**(1/3) * max(1, |x_i|)``;
    ``method="analytic"`` uses the hazard partials instead.

    Raises
    ------
    EvaluationError
        If the log-likelihood (numeric) or the gradient (analytic) is not
        finite.
    """
    obj = _NegLogLik(get_model(model), d, include_constant)
    if method == "analytic":
        if not np.isfinite(obj(theta_opt)):
            raise EvaluationError("log-likelihood is not finite at theta")
        g = obj.gradient(np.asarray(theta_opt, float))
        if not np.all(np.isfinite(g)):
            raise EvaluationError("gradient is not finite at theta")
        return g
    if method != "numeric":
        raise ValueError(f"method must be 'analytic' or 'numeric', got {method!r}")
    try:
        return central_gradient(obj, np.asarray(theta_opt, float), strict=True)
    except FloatingPointError as exc:
        raise EvaluationError(str(exc)) from None


def predicted_deaths(model, theta_nat, d: CohortDataset) -> np.ndarray:
    """Expected deaths ``N * q`` with observed survivors held fixed."""
    q = np.atleast_1d(get_model(model).death_prob(theta_nat, d.z))
    return d.survivors * q


def sse(predicted, d: CohortDataset) -> float:
    """Sum of squared errors between predicted and observed deaths."""
    diff = np.asarray(predicted, float) - d.deaths
    return float(diff @ diff)


def aic(ll: float, k: int) -> float:
    return -2.0 * float(ll) + 2.0 * k


def bic(ll: float, k: int, n: int) -> float:
    if n <= 0:
        raise ValueError(f"BIC needs a positive sample size, got {n}")
    return -2.0 * float(ll) + math.log(n) * k


# ---------------------------------------------------------------------------
# Fitting


def _final_ll(m, theta_opt, d, include_constant) -> float:
    try:
        return log_likelihood(m, m.to_natural(theta_opt), d, include_constant).total
    except (DomainError, EvaluationError):
        return -np.inf


def log_likelihood_opt(model, theta_opt, d: CohortDataset, include_constant=True) -> LogLikelihood:
    """:func:`log_likelihood` at optimizer-scale parameters."""
    m = get_model(model)
    return log_likelihood(m, m.to_natural(theta_opt), d, include_constant)


def _numeric(obj):
    def grad(x, f=None):
        return central_gradient(obj, x, f)
    return grad


def fit(model, d: CohortDataset, config: FitConfig | None = None) -> FitResult:
    """Maximum-likelihood fit of one model to one cohort.

    Runs BFGS from the model's heuristic start and ``config.n_random_starts``
    random starts (each from its own seeded stream) and keeps the start with
    the highest final log-likelihood; ties go to the earliest start.
    The optimizer always sees the likelihood with the binomial constant, so
    ``include_binomial_constant`` changes the reported values but never the
    estimates.

    Raises
    ------
    FitError
        If no start yields a finite log-likelihood.
    ValueError
        If the dataset has fewer ages than the model has parameters.
    """
    m = get_model(model)
    config = config or FitConfig()
    if d.n_ages < m.k:
        raise ValueError(f"{m.name} needs at least {m.k} ages, dataset has {d.n_ages}")
    obj = _NegLogLik(m, d, include_constant=True)
    heuristic = m.heuristic_start(d)
    starts = [heuristic] + m.random_starts(heuristic, config.n_random_starts, config.seed)

    grad = obj.gradient if config.gradient == "analytic" else None
    records = []
    for x0 in starts:
        res = bfgs(obj, x0, grad=grad, max_iter=config.max_iterations, gtol=config.gradient_tolerance,
                   ftol=config.relative_ll_tolerance, f_offset=obj.offset)
        if config.newton_refine and np.isfinite(res.fun):
            pol = newton_refine(obj, grad or _numeric(obj), res.x, f_offset=obj.offset, f_noise=obj.noise)
            if pol.fun <= res.fun + obj.noise and not np.array_equal(pol.x, res.x):
                res.x, res.fun = pol.x, pol.fun
                res.message = f"{res.message}; refined: {pol.message}"
        ll = _final_ll(m, res.x, d, config.include_binomial_constant) if np.isfinite(res.fun) else -np.inf
        records.append(StartRecord(
            tuple(float(v) for v in x0), tuple(float(v) for v in res.x),
            bool(res.converged), float(ll), int(res.iterations), res.message,
        ))

    lls = np.array([r.loglik for r in records])
    if not np.any(np.isfinite(lls)):
        raise FitError(f"{m.name}: all {len(records)} starts failed", records)
    best = int(np.argmax(np.where(np.isfinite(lls), lls, -np.inf)))
    theta_opt = np.array(records[best].final)
    return _result(m, d, theta_opt, records, best, config.include_binomial_constant)


def _result(m, d, theta_opt, records, best, include_constant):
    theta_nat = m.to_natural(theta_opt)
    ll = LogLikelihood(records[best].loglik, bool(include_constant))
    pred = predicted_deaths(m, theta_nat, d)
    n = d.size
    return FitResult(
        model=m.name,
        param_names=m.param_names,
        theta_opt=theta_opt,
        theta_nat=theta_nat,
        loglik=ll,
        k=m.k,
        n=n,
        aic=aic(ll.total, m.k),
        bic=bic(ll.total, m.k, n),
        sse=sse(pred, d),
        predicted_deaths=pred,
        starts=tuple(records),
        best_start_index=best,
        cohort_id=d.cohort_id,
    )


def likelihood_profile(model, d: CohortDataset, theta_hat, index: int, grid,
                       scale="natural", include_constant=True) -> np.ndarray:
    """Log-likelihood along one coordinate with the others fixed at ``theta_hat``.

    ``theta_hat`` and ``grid`` are on the natural scale unless
    ``scale="optimizer"``. Grid points outside the model domain give ``-inf``.
    This is a slice, not a re-optimized profile.
    """
    m = get_model(model)
    grid = np.asarray(grid, float).ravel()
    base = np.array(theta_hat, float)
    obj = _NegLogLik(m, d, include_constant)
    out = np.empty(grid.size)
    for j, v in enumerate(grid):
        t = base.copy()
        t[index] = v
        if scale == "natural":
            if m.positive[index] and not v > 0:
                out[j] = -np.inf
                continue
            t = m.from_natural(t)
        out[j] = obj.ll(t)
    return out
