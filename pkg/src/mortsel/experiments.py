"""Studies built on single fits: batches, cross-validation, downsampling,
clustering of delta-AIC patterns, support summaries and simulation.

Every task derives its random stream from the master seed and a key naming
the task (cohort, model, fold, fraction, replicate), so results do not
depend on the order tasks run in or on the number of worker processes.
Set ``MORTSEL_WORKERS`` to change the default worker count.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Sequence

import numpy as np

from .cohort import (CohortDataError, CohortDataset, combine, parse_batch_name, reconstruct_lifelines,
                     split_folds, thin)
from .formatting import fmt
from .hazards import MODELS, EvaluationError, get_model, resolve_models
from .inference import FitConfig, FitError, FitResult, fit, log_likelihood
from .rng import derive_rng, derive_seed
from .selection import ComparisonRow, ModelComparison, Support, compare, delta_matrix

WORKERS_ENV = "MORTSEL_WORKERS"
DEFAULT_AGES = tuple(range(80, 105))


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def _map(func, tasks, workers=None):
    workers = default_workers() if workers is None else max(1, int(workers))
    tasks = list(tasks)
    if workers == 1 or len(tasks) <= 1:
        return [func(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, tasks))


# ---------------------------------------------------------------------------
# Long-format tables


class StudyTable:
    """Long-format records with a unique key per row.

    The last column is ``value``; the others form the key. Rows keep
    insertion order, which every producer here makes deterministic.
    """

    def __init__(self, key_columns=("cohort", "model", "metric")):
        self.key_columns = tuple(key_columns)
        self._rows: dict[tuple, object] = {}

    @property
    def columns(self) -> tuple[str, ...]:
        return self.key_columns + ("value",)

    def add(self, *key_and_value):
        *key, value = key_and_value
        key = tuple(key)
        if len(key) != len(self.key_columns):
            raise ValueError(f"expected {len(self.key_columns)} key fields, got {len(key)}")
        if key in self._rows:
            raise KeyError(f"duplicate key {key}")
        self._rows[key] = value

    def extend(self, other: "StudyTable"):
        if other.key_columns != self.key_columns:
            raise ValueError("key columns differ")
        for k, v in other._rows.items():
            self.add(*k, v)

    def get(self, *key):
        return self._rows[tuple(key)]

    def __len__(self):
        return len(self._rows)

    def __iter__(self):
        for k, v in self._rows.items():
            yield k + (v,)

    def __eq__(self, other):
        if not isinstance(other, StudyTable):
            return NotImplemented
        return self.key_columns == other.key_columns and list(self) == list(other)

    def where(self, **match) -> list[tuple]:
        idx = {c: i for i, c in enumerate(self.columns)}
        return [r for r in self if all(r[idx[c]] == v for c, v in match.items())]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for *key, value in self:
            # float keys (fractions) use the shortest round-trip form
            key = [repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in key]
            w.writerow(key + [fmt(value) if isinstance(value, (float, np.floating)) else value])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "StudyTable":
        rows = list(csv.reader(io.StringIO(text)))
        table = cls(rows[0][:-1])
        for r in rows[1:]:
            try:
                value = float(r[-1])
            except ValueError:
                value = r[-1]
            table.add(*r[:-1], value)
        return table


# ---------------------------------------------------------------------------
# Simulation


def simulate_cohort(model, theta_nat, n0: int, ages: Sequence[int] = DEFAULT_AGES, seed: int = 0,
                    country="SIM", sex="total", cohort_year=0, age_offset=79) -> CohortDataset:
    """Draw deaths age by age: ``D ~ Binomial(N, q)``, then ``N -= D``."""
    m = get_model(model)
    n0 = int(n0)
    if n0 <= 0:
        raise ValueError(f"n0 must be positive, got {n0}")
    ages = np.asarray(ages, dtype=np.int64)
    q = np.atleast_1d(m.death_prob(theta_nat, ages - age_offset))
    rng = derive_rng(seed, "simulate", m.token)
    n = np.empty(ages.size, np.int64)
    d = np.empty(ages.size, np.int64)
    alive = n0
    for i, qi in enumerate(q):
        n[i] = alive
        d[i] = rng.binomial(alive, qi)
        alive -= d[i]
    return CohortDataset(ages, n, d, country, sex, cohort_year, age_offset)


# ---------------------------------------------------------------------------
# Batch fitting


def task_config(config: FitConfig, cohort_id: str, model) -> FitConfig:
    """Config for one (cohort, model) fit, with its own derived seed."""
    return config.replace(seed=derive_seed(config.seed, "fit", cohort_id, get_model(model).token))


def _fit_task(args):
    d, token, config = args
    try:
        return fit(token, d, task_config(config, d.cohort_id, token)), None
    except (FitError, EvaluationError, ValueError, ArithmeticError) as exc:
        return None, f"{type(exc).__name__}: {exc}"


@dataclass
class BatchResult:
    fits: dict[tuple[str, str], FitResult]
    failures: dict[tuple[str, str], str]
    comparisons: dict[str, ModelComparison]
    table: StudyTable

    def comparison_list(self) -> list[ModelComparison]:
        return list(self.comparisons.values())


def batch_fit(datasets: Iterable[CohortDataset], models=None, config: FitConfig | None = None,
              workers: int | None = None) -> BatchResult:
    """Fit every model to every cohort and compare models within each cohort.

    A fit that fails is recorded in ``failures`` (and as a ``failed`` row in
    the table) and left out of that cohort's comparison.
    """
    datasets = list(datasets)
    if not datasets:
        raise ValueError("no datasets given")
    ids = [d.cohort_id for d in datasets]
    if len(set(ids)) != len(ids):
        raise ValueError("cohort ids must be unique within a batch")
    models = resolve_models(models)
    if not models:
        raise ValueError("no models given")
    config = config or FitConfig()
    tasks = [(d, m.token, config) for d in datasets for m in models]
    outcomes = _map(_fit_task, tasks, workers)

    fits, failures, comparisons = {}, {}, {}
    table = StudyTable(("cohort", "model", "metric"))
    for (d, token, _), (res, err) in zip(tasks, outcomes):
        key = (d.cohort_id, get_model(token).name)
        if res is None:
            failures[key] = err
        else:
            fits[key] = res
    for d in datasets:
        cf = [fits[(d.cohort_id, m.name)] for m in models if (d.cohort_id, m.name) in fits]
        cmp = None
        if len(cf) >= 2:
            cmp = compare(cf, metadata=d.metadata())
            comparisons[d.cohort_id] = cmp
        for m in models:
            key = (d.cohort_id, m.name)
            if key in failures:
                table.add(d.cohort_id, m.name, "failed", failures[key])
                continue
            f = fits[key]
            table.add(d.cohort_id, m.name, "loglik", f.ll)
            table.add(d.cohort_id, m.name, "k", f.k)
            table.add(d.cohort_id, m.name, "n", f.n)
            table.add(d.cohort_id, m.name, "aic", f.aic)
            table.add(d.cohort_id, m.name, "bic", f.bic)
            table.add(d.cohort_id, m.name, "sse", f.sse)
            table.add(d.cohort_id, m.name, "converged", int(f.converged))
            if cmp is not None:
                r = cmp.row(m.name)
                table.add(d.cohort_id, m.name, "delta_aic", r.delta_aic)
                table.add(d.cohort_id, m.name, "delta_bic", r.delta_bic)
                table.add(d.cohort_id, m.name, "aic_rank", r.aic_rank)
                table.add(d.cohort_id, m.name, "bic_rank", r.bic_rank)
                table.add(d.cohort_id, m.name, "sse_rank", r.sse_rank)
                table.add(d.cohort_id, m.name, "support", r.support.value)
    return BatchResult(fits, failures, comparisons, table)


def comparisons_from_table(table: StudyTable) -> list[ModelComparison]:
    """Rebuild per-cohort comparisons from a batch table (e.g. read from CSV).

    Cohort labels are recovered from ids of the form ``country_sex_year``.
    """
    by_cohort: dict[str, dict[str, dict]] = {}
    for cohort, model, metric, value in table:
        by_cohort.setdefault(cohort, {}).setdefault(model, {})[metric] = value
    out = []
    for cohort, per_model in by_cohort.items():
        rows = []
        for name, v in per_model.items():
            if "delta_aic" not in v:
                continue
            rows.append(ComparisonRow(
                model=get_model(name).name, k=int(float(v["k"])), loglik=float(v["loglik"]),
                aic=float(v["aic"]), bic=float(v["bic"]), sse=float(v["sse"]),
                delta_aic=float(v["delta_aic"]), delta_bic=float(v["delta_bic"]),
                aic_rank=int(float(v["aic_rank"])), bic_rank=int(float(v["bic_rank"])), sse_rank=int(float(v["sse_rank"])),
                support=Support(v["support"]),
            ))
        if len(rows) < 2:
            continue
        rows.sort(key=lambda r: MODELS.index(get_model(r.model)))
        try:
            meta = parse_batch_name(cohort)
        except CohortDataError:
            meta = {}
        n = int(float(next(iter(per_model.values())).get("n", 0)))
        out.append(ModelComparison(cohort, n, tuple(rows), (), meta))
    return out


# ---------------------------------------------------------------------------
# Cross-validation


class CVError(RuntimeError):
    def __init__(self, message, fold: int):
        super().__init__(message)
        self.fold = fold


@dataclass(frozen=True)
class CVResult:
    """Held-out error per fold: mean negative log-likelihood per individual."""

    model: str
    k_folds: int
    fold_errors: tuple[float, ...]
    mean_error: float
    rank: int | None = None


def held_out_error(model, theta_nat, fold: CohortDataset) -> float:
    """Negative binomial log-likelihood (constant included) per individual."""
    if fold.size == 0:
        return 0.0
    ll = log_likelihood(model, theta_nat, fold, include_constant=True).total
    return -ll / fold.size


def _cv_task(args):
    token, train, test, config, i = args
    try:
        res = fit(token, train, config)
        return held_out_error(token, res.theta_nat, test), None
    except (FitError, EvaluationError, ValueError, ArithmeticError) as exc:
        return None, f"{type(exc).__name__}: {exc}"


def cv_config(config: FitConfig, model, k: int, fold: int) -> FitConfig:
    return config.replace(seed=derive_seed(config.seed, "cv", get_model(model).token, int(k), int(fold)))


def _cv_tasks(m, folds, config):
    k = len(folds)
    for i in range(k):
        train = combine(folds[j] for j in range(k) if j != i)
        yield (m.token, train, folds[i], cv_config(config, m, k, i), i)


def cross_validate(model, d: CohortDataset, k: int = 5, seed: int = 0,
                   config: FitConfig | None = None, workers: int | None = None) -> CVResult:
    """K-fold cross-validation over individuals reconstructed from ``d``.

    Folds come from ``seed``; fold fits use seeds derived from
    ``config.seed``, the model and the fold index.

    Raises
    ------
    CVError
        If a fold's fit fails; ``.fold`` holds the fold index.
    """
    m = get_model(model)
    config = config or FitConfig()
    folds = split_folds(reconstruct_lifelines(d), k, seed)
    tasks = list(_cv_tasks(m, folds, config))
    out = _map(_cv_task, tasks, workers)
    errors = []
    for i, (err, msg) in enumerate(out):
        if err is None:
            raise CVError(f"{m.name}: fit on folds other than {i} failed ({msg})", i)
        errors.append(err)
    return CVResult(m.name, int(k), tuple(errors), float(np.mean(errors)))


def rank_cv(results: Sequence[CVResult]) -> list[CVResult]:
    """Attach ranks by ascending mean error (ties by registry order)."""
    order = sorted(range(len(results)),
                   key=lambda i: (results[i].mean_error, MODELS.index(get_model(results[i].model))))
    ranks = {i: r for r, i in enumerate(order, start=1)}
    return [CVResult(r.model, r.k_folds, r.fold_errors, r.mean_error, ranks[i])
            for i, r in enumerate(results)]


def cross_validate_models(d: CohortDataset, models=None, k: int = 5, seed: int = 0,
                          config: FitConfig | None = None, workers: int | None = None) -> list[CVResult]:
    """Cross-validate several models on the same folds and rank them."""
    models = resolve_models(models)
    config = config or FitConfig()
    folds = split_folds(reconstruct_lifelines(d), k, seed)
    tasks = [t for m in models for t in _cv_tasks(m, folds, config)]
    out = _map(_cv_task, tasks, workers)
    results = []
    for j, m in enumerate(models):
        errors = []
        for i in range(k):
            err, msg = out[j * k + i]
            if err is None:
                raise CVError(f"{m.name}: fit on folds other than {i} failed ({msg})", i)
            errors.append(err)
        results.append(CVResult(m.name, int(k), tuple(errors), float(np.mean(errors))))
    return rank_cv(results)


def cv_table(results: Sequence[CVResult], cohort_id: str) -> StudyTable:
    table = StudyTable(("cohort", "model", "metric"))
    for r in results:
        for i, e in enumerate(r.fold_errors):
            table.add(cohort_id, r.model, f"fold_{i}", e)
        table.add(cohort_id, r.model, "mean_error", r.mean_error)
        if r.rank is not None:
            table.add(cohort_id, r.model, "rank", r.rank)
    return table


# ---------------------------------------------------------------------------
# Support summaries


def _group_label(cmp: ModelComparison, by: str) -> str:
    if by == "all":
        return "all"
    meta = cmp.metadata or {}
    if by not in meta:
        raise KeyError(f"comparison for {cmp.cohort_id} carries no {by!r} label")
    return f"{by}={meta[by]}"


def good_bad_summary(comparisons: Sequence[ModelComparison], by: Sequence[str] | str = "all") -> StudyTable:
    """Fraction of cohorts giving each model substantial support (delta <= 2)
    and no support (delta > 10), per group.

    ``by`` is any of ``"all"``, ``"sex"``, ``"country"`` (or a list of them).
    Denominators count the cohorts in which the model was fitted.
    """
    comparisons = list(comparisons)
    if not comparisons:
        raise ValueError("no comparisons given")
    groupings = [by] if isinstance(by, str) else list(by)
    table = StudyTable(("group", "model", "metric"))
    for g in groupings:
        labels = sorted({_group_label(c, g) for c in comparisons})
        for label in labels:
            members = [c for c in comparisons if _group_label(c, g) == label]
            for m in MODELS:
                rows = [c.row(m.name) for c in members if m.name in c.models]
                if not rows:
                    continue
                n = len(rows)
                table.add(label, m.name, "n_cohorts", n)
                table.add(label, m.name, "frac_substantial", sum(r.support is Support.SUBSTANTIAL for r in rows) / n)
                table.add(label, m.name, "frac_none", sum(r.support is Support.NONE for r in rows) / n)
    return table


# ---------------------------------------------------------------------------
# Clustering of delta-AIC patterns


@dataclass(frozen=True)
class Dendrogram:
    """Binary merge tree.

    Leaves are numbered ``0..n-1`` in input order; merge ``i`` creates node
    ``n + i`` from ``(left, right)`` at ``height``. Under centroid linkage a
    later merge can sit lower than an earlier one; ``monotone`` reports
    whether that happened.
    """

    leaves: tuple[str, ...]
    merges: tuple[tuple[int, int, float], ...]

    @property
    def heights(self) -> tuple[float, ...]:
        return tuple(h for _, _, h in self.merges)

    @property
    def monotone(self) -> bool:
        h = self.heights
        return all(a <= b for a, b in zip(h, h[1:]))

    def members(self, node: int) -> tuple[str, ...]:
        n = len(self.leaves)
        if node < n:
            return (self.leaves[node],)
        left, right, _ = self.merges[node - n]
        return self.members(left) + self.members(right)

    def clusters(self) -> list[frozenset]:
        """Leaf sets of every internal node, in merge order."""
        n = len(self.leaves)
        return [frozenset(self.members(n + i)) for i in range(len(self.merges))]

    def to_dict(self) -> dict:
        return {"leaves": list(self.leaves), "merges": [[l, r, h] for l, r, h in self.merges]}

    def to_json(self, indent=2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    def newick(self) -> str:
        """Newick text with branch length = parent height - child height."""
        n = len(self.leaves)

        def height(node):
            return 0.0 if node < n else self.merges[node - n][2]

        def label(name):
            return "'" + name.replace("'", "''") + "'" if any(c in name for c in " ,:;()[]'") else name

        def render(node):
            if node < n:
                return label(self.leaves[node])
            l, r, h = self.merges[node - n]
            return f"({render(l)}:{fmt(h - height(l))},{render(r)}:{fmt(h - height(r))})"

        if n == 1:
            return label(self.leaves[0]) + ";"
        return render(n + len(self.merges) - 1) + ";"


def cluster_models(delta, names: Sequence[str] | None = None) -> Dendrogram:
    """Agglomerative clustering of models by their delta-AIC vectors.

    ``delta`` is a models x cohorts array (or a mapping model -> vector).
    The dissimilarity between two clusters is the Euclidean distance between
    their mean vectors; the closest pair is merged at each step, ties going
    to the pair whose smallest leaf indices come first.

    Raises
    ------
    ValueError
        Fewer than two models, ragged rows, or missing (non-finite) entries.
    """
    if isinstance(delta, dict):
        names = list(delta) if names is None else list(names)
        X = np.array([np.asarray(delta[k], float) for k in names])
    else:
        X = np.asarray(delta, float)
        names = [str(i) for i in range(X.shape[0])] if names is None else [str(n) for n in names]
    if X.ndim != 2 or X.shape[0] != len(names):
        raise ValueError("delta must be a models x cohorts matrix with one name per row")
    if X.shape[0] < 2:
        raise ValueError("need at least two models to cluster")
    if not np.all(np.isfinite(X)):
        raise ValueError("delta matrix has missing entries")

    n = X.shape[0]
    # active clusters: node id -> (sorted leaf indices, mean vector); the mean
    # is always taken over member rows in leaf order, whatever the merge history
    active = {i: ((i,), X[i]) for i in range(n)}
    merges = []
    for step in range(n - 1):
        best = None
        for a, b in combinations(sorted(active, key=lambda c: active[c][0][0]), 2):
            (la, ca), (lb, cb) = active[a], active[b]
            key = (float(np.linalg.norm(ca - cb)), la[0], lb[0])
            if best is None or key < best[0]:
                best = (key, a, b)
        (dist, _, _), a, b = best
        leaves = tuple(sorted(active.pop(a)[0] + active.pop(b)[0]))
        active[n + step] = (leaves, X[list(leaves)].mean(axis=0))
        merges.append((a, b, dist))
    return Dendrogram(tuple(names), tuple(merges))


def cluster_comparisons(comparisons: Sequence[ModelComparison], models=None) -> Dendrogram:
    """Cluster models on the delta-AIC matrix of several cohorts.

    Models missing from any cohort are dropped (the matrix must be complete).
    """
    names, _, X = delta_matrix(comparisons, models)
    keep = np.all(np.isfinite(X), axis=1)
    return cluster_models(X[keep], [n for n, k in zip(names, keep) if k])


# ---------------------------------------------------------------------------
# Downsampling


@dataclass
class DownsampleResult:
    table: StudyTable
    failures: dict
    summary: StudyTable


def downsample_study(d: CohortDataset, fractions: Sequence[float], models=None, seed: int = 0,
                     replicates: int = 1, config: FitConfig | None = None,
                     workers: int | None = None) -> DownsampleResult:
    """Thin the cohort to each fraction, refit all models, record delta-AIC.

    ``table`` has one ``delta_aic`` row per (fraction, replicate, model); a
    failed fit or a replicate with fewer than two successful fits gives NaN.
    ``summary`` averages delta-AIC over replicates (NaNs ignored).
    Thinned cohorts keep the source cohort id, so fraction 1.0 reproduces
    the unthinned fits exactly.
    """
    fractions = [float(f) for f in fractions]
    for f in fractions:
        if not 0.0 < f <= 1.0:
            raise ValueError(f"fractions must lie in (0, 1], got {f}")
    if int(replicates) < 1:
        raise ValueError("replicates must be >= 1")
    models = resolve_models(models)
    config = config or FitConfig()
    lines = reconstruct_lifelines(d)
    thinned = [(f, r, thin(lines, f, derive_seed(seed, "downsample", f, r)))
               for f in fractions for r in range(int(replicates))]
    tasks = [(dd, m.token, config) for _, _, dd in thinned for m in models]
    outcomes = _map(_fit_task, tasks, workers)

    table = StudyTable(("cohort", "fraction", "replicate", "model", "metric"))
    summary = StudyTable(("cohort", "fraction", "model", "metric"))
    failures = {}
    acc: dict[tuple, list] = {}
    for j, (f, r, dd) in enumerate(thinned):
        chunk = outcomes[j * len(models):(j + 1) * len(models)]
        ok = [res for res, _ in chunk if res is not None]
        for m, (res, err) in zip(models, chunk):
            if res is None:
                failures[(f, r, m.name)] = err
        deltas = compare(ok).delta_aic() if len(ok) >= 2 else {}
        for m in models:
            v = float(deltas.get(m.name, math.nan))
            table.add(d.cohort_id, f, r, m.name, "delta_aic", v)
            acc.setdefault((f, m.name), []).append(v)
    for f in fractions:
        for m in models:
            vals = np.array(acc[(f, m.name)])
            finite = vals[np.isfinite(vals)]
            summary.add(d.cohort_id, f, m.name, "mean_delta_aic", float(finite.mean()) if finite.size else math.nan)
            summary.add(d.cohort_id, f, m.name, "n_replicates", int(finite.size))
    return DownsampleResult(table, failures, summary)
