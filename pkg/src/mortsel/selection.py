"""Information criteria and cross-model comparison for one cohort.

``compare`` turns a set of fits on the same cohort into a table with
delta-AIC/BIC, ranks and the usual rule-of-thumb support categories:
a delta of at most 2 is "substantial" support, above 10 is "none", and
anything between is "intermediate".
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .formatting import fmt
from .hazards import MODELS, get_model


class Support(str, Enum):
    SUBSTANTIAL = "substantial"
    INTERMEDIATE = "intermediate"
    NONE = "none"

    def __str__(self):
        return self.value


class ComparisonError(ValueError):
    """Fits cannot be compared (fewer than two, or from different cohorts)."""


def aic(fit) -> float:
    """``-2 ll + 2k``."""
    ll = float(fit.ll)
    if not math.isfinite(ll):
        raise ValueError("AIC needs a finite log-likelihood")
    return -2.0 * ll + 2.0 * fit.k


def bic(fit, n: int | None = None) -> float:
    """``-2 ll + ln(n) k``; ``n`` defaults to the cohort size stored on the fit."""
    n = fit.n if n is None else n
    if n <= 0:
        raise ValueError(f"BIC needs a positive sample size, got {n}")
    ll = float(fit.ll)
    if not math.isfinite(ll):
        raise ValueError("BIC needs a finite log-likelihood")
    return -2.0 * ll + math.log(n) * fit.k


def support_category(delta: float) -> Support:
    delta = float(delta)
    if math.isnan(delta) or delta < 0:
        raise ValueError(f"delta must be a non-negative number, got {delta}")
    if delta <= 2.0:
        return Support.SUBSTANTIAL
    if delta > 10.0:
        return Support.NONE
    return Support.INTERMEDIATE


@dataclass(frozen=True)
class ComparisonRow:
    model: str
    k: int
    loglik: float
    aic: float
    bic: float
    sse: float
    delta_aic: float
    delta_bic: float
    aic_rank: int
    bic_rank: int
    sse_rank: int
    support: Support


CSV_COLUMNS = ("model", "k", "loglik", "sse", "sse_rank", "aic", "aic_rank", "delta_aic",
               "bic", "bic_rank", "delta_bic", "support")


@dataclass(frozen=True)
class ModelComparison:
    """Per-model criteria for one cohort, rows in model-registry order.

    ``ties`` lists groups of models sharing an exactly equal AIC; their
    ranks were assigned by registry order.
    """

    cohort_id: str
    n: int
    rows: tuple[ComparisonRow, ...]
    ties: tuple[tuple[str, ...], ...] = ()
    metadata: dict | None = None

    @property
    def tie_flagged(self) -> bool:
        return bool(self.ties)

    @property
    def models(self) -> tuple[str, ...]:
        return tuple(r.model for r in self.rows)

    @property
    def best_model(self) -> str:
        return next(r.model for r in self.rows if r.aic_rank == 1)

    def row(self, model) -> ComparisonRow:
        name = get_model(model).name
        for r in self.rows:
            if r.model == name:
                return r
        raise KeyError(f"{name} is not part of this comparison")

    def delta_aic(self) -> dict[str, float]:
        return {r.model: r.delta_aic for r in self.rows}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([r.model, r.k, fmt(r.loglik), fmt(r.sse), r.sse_rank, fmt(r.aic), r.aic_rank,
                        fmt(r.delta_aic), fmt(r.bic), r.bic_rank, fmt(r.delta_bic), r.support.value])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "cohort": self.cohort_id,
            "n": self.n,
            "ties": [list(t) for t in self.ties],
            "models": [
                {c: (getattr(r, c).value if c == "support" else getattr(r, c)) for c in CSV_COLUMNS}
                for r in self.rows
            ],
        }

    def to_json(self, indent=2) -> str:
        return json.dumps(self.to_dict(), indent=indent)


def _ranks(values, order_key) -> list[int]:
    """1-based ranks by ascending value, ties broken by ``order_key``."""
    idx = sorted(range(len(values)), key=lambda i: (values[i], order_key[i]))
    ranks = [0] * len(values)
    for r, i in enumerate(idx, start=1):
        ranks[i] = r
    return ranks


def compare(fits: Sequence, n: int | None = None, metadata: dict | None = None) -> ModelComparison:
    """Compare fits of different models on one cohort.

    ``n`` (cohort size for BIC) defaults to the size recorded on the fits.
    Ties in AIC (or BIC, SSE) are broken by model-registry order; AIC ties
    are reported in ``ties``. ``metadata`` (country, sex, ...) is carried
    along for grouped summaries.

    Raises
    ------
    ComparisonError
        Fewer than two fits, a model given twice, or fits from different
        cohorts.
    """
    fits = list(fits)
    if len(fits) < 2:
        raise ComparisonError("need at least two fits to compare")
    cohorts = {f.cohort_id for f in fits}
    if len(cohorts) > 1:
        raise ComparisonError(f"fits come from different cohorts: {sorted(cohorts)}")
    order = [MODELS.index(get_model(f.model)) for f in fits]
    if len(set(order)) != len(order):
        raise ComparisonError("each model may appear only once")
    fits = [f for _, f in sorted(zip(order, fits), key=lambda t: t[0])]
    order.sort()
    n = fits[0].n if n is None else int(n)

    a = [aic(f) for f in fits]
    b = [bic(f, n) for f in fits]
    s = [float(f.sse) for f in fits]
    a_min, b_min = min(a), min(b)
    a_rank, b_rank, s_rank = _ranks(a, order), _ranks(b, order), _ranks(s, order)

    rows = []
    for i, f in enumerate(fits):
        da = a[i] - a_min
        rows.append(ComparisonRow(
            model=get_model(f.model).name, k=int(f.k), loglik=float(f.ll), aic=a[i], bic=b[i], sse=s[i],
            delta_aic=da, delta_bic=b[i] - b_min, aic_rank=a_rank[i], bic_rank=b_rank[i],
            sse_rank=s_rank[i], support=support_category(da),
        ))

    ties = []
    for v in sorted(set(a)):
        group = [rows[i].model for i in range(len(a)) if a[i] == v]
        if len(group) > 1:
            ties.append(tuple(group))
    return ModelComparison(fits[0].cohort_id, n, tuple(rows), tuple(ties), dict(metadata or {}))


def delta_matrix(comparisons: Sequence[ModelComparison], models=None):
    """Delta-AIC as a models x cohorts array (NaN where a model is missing)."""
    if models is None:
        present = {m for c in comparisons for m in c.models}
        models = [m.name for m in MODELS if m.name in present]
    else:
        models = [get_model(m).name for m in models]
    out = np.full((len(models), len(comparisons)), np.nan)
    for j, c in enumerate(comparisons):
        d = c.delta_aic()
        for i, m in enumerate(models):
            if m in d:
                out[i, j] = d[m]
    return models, [c.cohort_id for c in comparisons], out
