"""Cohort death-count data: ingestion, validation, lifelines, folds and thinning.

A cohort dataset holds, for single years of age, the number of survivors to
exact age ``x`` (``N``) and the number of deaths between ``x`` and ``x + 1``
(``D``). Models work on the shifted age index ``z = age - age_offset`` so that
age 80 maps to ``z = 1`` with the default offset of 79.
"""

from __future__ import annotations

import csv
import io
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np

from .rng import derive_rng

SEXES = ("female", "male", "total")
DEFAULT_AGE_OFFSET = 79
CSV_HEADER = ("age", "survivors", "deaths")

_BATCH_NAME = re.compile(r"^(?P<country>.+)_(?P<sex>female|male|total)_(?P<cohort>-?\d+)$")


class CohortDataError(ValueError):
    """Raised when cohort data is malformed or violates an invariant."""


@dataclass(frozen=True)
class CohortDataset:
    """Survivors and deaths by single year of age for one cohort.

    Parameters
    ----------
    ages : array of int
        Consecutive integer ages in years.
    survivors : array of int
        ``N``, the number alive at exact age ``ages[i]``.
    deaths : array of int
        ``D``, deaths between ``ages[i]`` and ``ages[i] + 1``.
    country, sex, cohort_year : labels
        Cohort identity; ``sex`` is one of ``female``, ``male``, ``total``.
    age_offset : int
        Subtracted from ``ages`` to obtain the model age index ``z``.
    """

    ages: np.ndarray
    survivors: np.ndarray
    deaths: np.ndarray
    country: str = "unknown"
    sex: str = "total"
    cohort_year: int = 0
    age_offset: int = DEFAULT_AGE_OFFSET

    def __post_init__(self):
        ages = np.array(self.ages, dtype=np.int64)
        n = np.array(self.survivors, dtype=np.int64)
        d = np.array(self.deaths, dtype=np.int64)
        for arr in (ages, n, d):
            arr.setflags(write=False)
        object.__setattr__(self, "ages", ages)
        object.__setattr__(self, "survivors", n)
        object.__setattr__(self, "deaths", d)
        _validate(ages, n, d, self.sex)

    @property
    def z(self) -> np.ndarray:
        """Model age index, ``age - age_offset``."""
        return (self.ages - self.age_offset).astype(float)

    @property
    def n_ages(self) -> int:
        return int(self.ages.size)

    @property
    def size(self) -> int:
        """Cohort size at the youngest age (the ``n`` used by BIC)."""
        return int(self.survivors[0]) if self.ages.size else 0

    @property
    def cohort_id(self) -> str:
        return f"{self.country}_{self.sex}_{self.cohort_year}"

    def with_counts(self, survivors, deaths) -> "CohortDataset":
        """Same ages and labels, new counts."""
        return CohortDataset(
            self.ages, survivors, deaths, self.country, self.sex,
            self.cohort_year, self.age_offset,
        )

    def metadata(self) -> dict:
        return {
            "country": self.country,
            "sex": self.sex,
            "cohort_year": int(self.cohort_year),
            "age_offset": int(self.age_offset),
        }

    def __eq__(self, other):
        if not isinstance(other, CohortDataset):
            return NotImplemented
        return (
            self.metadata() == other.metadata()
            and np.array_equal(self.ages, other.ages)
            and np.array_equal(self.survivors, other.survivors)
            and np.array_equal(self.deaths, other.deaths)
        )

    __hash__ = None


def _validate(ages, n, d, sex):
    if sex not in SEXES:
        raise CohortDataError(f"sex must be one of {SEXES}, got {sex!r}")
    if not (ages.ndim == n.ndim == d.ndim == 1) or not (ages.size == n.size == d.size):
        raise CohortDataError("ages, survivors and deaths must be 1-d arrays of equal length")
    if ages.size == 0:
        raise CohortDataError("dataset has no rows")
    for i in range(ages.size):
        if n[i] < 0 or d[i] < 0:
            raise CohortDataError(f"negative count at age {ages[i]}")
        if d[i] > n[i]:
            raise CohortDataError(f"deaths exceed survivors at age {ages[i]}")
        if i and ages[i] != ages[i - 1] + 1:
            if ages[i] == ages[i - 1]:
                raise CohortDataError(f"duplicate age {ages[i]}")
            raise CohortDataError(f"age gap between {ages[i - 1]} and {ages[i]}")


# ---------------------------------------------------------------------------
# CSV ingestion / export


def parse_cohort_csv(source, country="unknown", sex="total", cohort_year=0,
                     age_offset=DEFAULT_AGE_OFFSET) -> CohortDataset:
    """Read an ``age,survivors,deaths`` CSV into a validated dataset.

    ``source`` may be bytes, a text string, a binary or text stream. Rows are
    sorted by age before validation. Errors name the offending CSV row
    (1-based, header is row 1).
    """
    text = _as_text(source)
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise CohortDataError("empty CSV") from None
    if tuple(h.strip().lower() for h in header) != CSV_HEADER:
        raise CohortDataError(f"row 1: expected header {','.join(CSV_HEADER)}, got {','.join(header)}")

    rows = []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 3:
            raise CohortDataError(f"row {lineno}: expected 3 fields, got {len(row)}")
        try:
            age, n, d = (int(c.strip()) for c in row)
        except ValueError:
            raise CohortDataError(f"row {lineno}: non-integer field in {row!r}") from None
        if n < 0 or d < 0:
            raise CohortDataError(f"row {lineno}: negative count at age {age}")
        if d > n:
            raise CohortDataError(f"row {lineno}: deaths exceed survivors at age {age}")
        rows.append((age, n, d, lineno))
    if not rows:
        raise CohortDataError("CSV has no data rows")

    rows.sort(key=lambda r: r[0])
    for (a0, _, _, l0), (a1, _, _, l1) in zip(rows, rows[1:]):
        if a1 == a0:
            raise CohortDataError(f"row {l1}: duplicate age {a1} (also row {l0})")
        if a1 != a0 + 1:
            raise CohortDataError(f"row {l1}: age gap between {a0} and {a1}")

    ages, n, d, _ = zip(*rows)
    return CohortDataset(np.array(ages), np.array(n), np.array(d), country, sex,
                         int(cohort_year), int(age_offset))


def _as_text(source) -> str:
    if isinstance(source, bytes):
        return source.decode("utf-8-sig")
    if isinstance(source, str):
        return source
    data = source.read()
    return data.decode("utf-8-sig") if isinstance(data, bytes) else data


def to_csv(d: CohortDataset, out: TextIO | None = None) -> str:
    """Write ``d`` in the ingestion schema; returns the CSV text."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for a, n, k in zip(d.ages, d.survivors, d.deaths):
        w.writerow((int(a), int(n), int(k)))
    text = buf.getvalue()
    if out is not None:
        out.write(text)
    return text


def parse_batch_name(path) -> dict:
    """Split ``{country}_{sex}_{cohort}.csv`` into its labels."""
    m = _BATCH_NAME.match(Path(path).stem)
    if m is None:
        raise CohortDataError(f"file name {Path(path).name!r} does not match {{country}}_{{sex}}_{{cohort}}.csv")
    return {"country": m["country"], "sex": m["sex"], "cohort_year": int(m["cohort"])}


def read_cohort_file(path, age_offset=DEFAULT_AGE_OFFSET) -> CohortDataset:
    """Read one cohort CSV, taking labels from a JSON sidecar or the file name.

    A sidecar ``<stem>.json`` may carry ``country``, ``sex``, ``cohort_year``
    and ``age_offset``; missing keys fall back to the batch naming convention.
    """
    path = Path(path)
    meta = {"country": path.stem, "sex": "total", "cohort_year": 0, "age_offset": age_offset}
    try:
        meta.update(parse_batch_name(path))
    except CohortDataError:
        pass
    sidecar = path.with_suffix(".json")
    if sidecar.exists():
        meta.update(json.loads(sidecar.read_text()))
    return parse_cohort_csv(path.read_bytes(), **meta)


def read_cohort_dir(directory, age_offset=DEFAULT_AGE_OFFSET) -> list[CohortDataset]:
    """Read every ``{country}_{sex}_{cohort}.csv`` in ``directory``, sorted by name."""
    files = sorted(p for p in Path(directory).glob("*.csv") if _BATCH_NAME.match(p.stem))
    return [read_cohort_file(p, age_offset) for p in files]


# ---------------------------------------------------------------------------
# Central death rates


@dataclass(frozen=True)
class CentralRates:
    """Central death rates ``M = D / (N - D/2)`` with per-row flags.

    ``defined`` is False where the denominator is zero (``N = 0``);
    ``extreme`` marks rows where the rate exceeds 1 or all members died.
    Undefined rows hold NaN.
    """

    ages: np.ndarray
    z: np.ndarray
    rates: np.ndarray
    exposure: np.ndarray
    defined: np.ndarray
    extreme: np.ndarray

    @property
    def usable(self) -> np.ndarray:
        """Rows with a defined, strictly positive rate (log-regression ready)."""
        return self.defined & (self.rates > 0)


def central_death_rates(d: CohortDataset) -> CentralRates:
    n = d.survivors.astype(float)
    k = d.deaths.astype(float)
    exposure = n - 0.5 * k
    defined = exposure > 0
    rates = np.full(n.shape, np.nan)
    rates[defined] = k[defined] / exposure[defined]
    extreme = defined & ((rates > 1.0) | ((k == n) & (n > 0)))
    return CentralRates(d.ages.copy(), d.z, rates, exposure, defined, extreme)


# ---------------------------------------------------------------------------
# Lifelines


@dataclass(frozen=True)
class Lifelines:
    """Individual exits reconstructed from aggregate counts.

    Each individual has an ``exit_age`` and a ``died`` flag. A death at age
    ``x`` means dying between ``x`` and ``x + 1``; a censored exit at age ``x``
    means leaving at exact age ``x`` (present at ``x - 1``, absent at ``x``).
    Individuals are stored sorted by (exit age, censored-after-deaths) so the
    order is a function of the source data only.
    """

    exit_age: np.ndarray
    died: np.ndarray
    template: CohortDataset

    @property
    def size(self) -> int:
        return int(self.exit_age.size)

    @property
    def death_ages(self) -> np.ndarray:
        return self.exit_age[self.died]

    @property
    def censored_ages(self) -> np.ndarray:
        return self.exit_age[~self.died]

    def subset(self, index) -> "Lifelines":
        idx = np.sort(np.asarray(index, dtype=np.int64))
        return Lifelines(self.exit_age[idx], self.died[idx], self.template)

    def aggregate(self) -> CohortDataset:
        return aggregate_lifelines(self.exit_age, self.died, self.template)


def aggregate_lifelines(exit_age, died, template: CohortDataset) -> CohortDataset:
    """Re-aggregate individual exits onto the age grid of ``template``."""
    ages = template.ages
    first = int(ages[0])
    m = ages.size
    exit_age = np.asarray(exit_age, dtype=np.int64)
    died = np.asarray(died, dtype=bool)
    # last age at which each individual is counted among survivors
    last_present = np.where(died, exit_age, exit_age - 1) - first
    counts = np.bincount(np.clip(last_present, -1, m - 1) + 1, minlength=m + 1)[1:]
    survivors = counts[::-1].cumsum()[::-1]
    deaths = np.bincount(exit_age[died] - first, minlength=m)[:m]
    return template.with_counts(survivors, deaths)


def reconstruct_lifelines(d: CohortDataset) -> Lifelines:
    """Expand aggregate counts into individual lifelines.

    Deaths at each age become individuals dying at that age; any shortfall
    ``N[i] - D[i] - N[i+1]`` becomes individuals censored at ``age + 1`` and
    survivors beyond the last age are censored at ``last age + 1``.

    Raises
    ------
    CohortDataError
        If survivors increase between consecutive ages beyond what deaths
        allow (``N[i+1] > N[i] - D[i]``).
    """
    n, k, ages = d.survivors, d.deaths, d.ages
    nxt = np.append(n[1:], 0)
    left = n - k - nxt
    if np.any(left[:-1] < 0):
        i = int(np.flatnonzero(left[:-1] < 0)[0])
        raise CohortDataError(
            f"cohort gains unsupported: survivors at age {ages[i + 1]} ({n[i + 1]}) exceed "
            f"survivors minus deaths at age {ages[i]} ({n[i] - k[i]})"
        )
    exit_age = np.concatenate([np.repeat(ages, k), np.repeat(ages + 1, left)])
    died = np.concatenate([np.ones(int(k.sum()), bool), np.zeros(int(left.sum()), bool)])
    order = np.lexsort((~died, exit_age))
    return Lifelines(exit_age[order], died[order], d)


def lifelines_to_csv(lines: Lifelines) -> str:
    """Export lifelines re-aggregated in the ingestion schema."""
    return to_csv(lines.aggregate())


# ---------------------------------------------------------------------------
# Folds and thinning


def split_folds(lines: Lifelines, k: int, seed: int) -> list[CohortDataset]:
    """Randomly partition individuals into ``k`` folds of near-equal size.

    Individuals are shuffled with a generator derived from ``seed`` and dealt
    round-robin, so fold sizes differ by at most one and the first folds are
    the larger ones.
    """
    k = int(k)
    if k < 2 or k > lines.size:
        raise ValueError(f"K must be >= 2 and <= number of individuals ({lines.size}), got {k}")
    perm = derive_rng(seed, "folds", k).permutation(lines.size)
    return [lines.subset(perm[i::k]).aggregate() for i in range(k)]


def fold_indices(lines: Lifelines, k: int, seed: int) -> list[np.ndarray]:
    """Individual indices per fold, as used by :func:`split_folds`."""
    perm = derive_rng(seed, "folds", int(k)).permutation(lines.size)
    return [np.sort(perm[i::k]) for i in range(k)]


def thin(lines: Lifelines, fraction: float, seed: int) -> CohortDataset:
    """Keep each individual independently with probability ``fraction``."""
    fraction = float(fraction)
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    keep = derive_rng(seed, "thin").random(lines.size) < fraction
    return lines.subset(np.flatnonzero(keep)).aggregate()


def combine(datasets: Iterable[CohortDataset]) -> CohortDataset:
    """Sum counts of datasets sharing one age grid."""
    datasets = list(datasets)
    base = datasets[0]
    for other in datasets[1:]:
        if not np.array_equal(other.ages, base.ages):
            raise CohortDataError("cannot combine datasets with different ages")
    n = np.sum([x.survivors for x in datasets], axis=0)
    k = np.sum([x.deaths for x in datasets], axis=0)
    return base.with_counts(n, k)
