"""Fit and compare parametric old-age mortality hazard models.

Typical use::

    from mortsel import read_cohort_file, fit, compare, MODELS

    d = read_cohort_file("DNK_male_1895.csv")
    comparison = compare([fit(m, d) for m in MODELS])
"""

__version__ = "0.1.0"

from .cohort import (
    CohortDataError,
    CohortDataset,
    central_death_rates,
    parse_cohort_csv,
    read_cohort_dir,
    read_cohort_file,
    reconstruct_lifelines,
    split_folds,
    thin,
)
from .experiments import (
    CVResult,
    Dendrogram,
    StudyTable,
    batch_fit,
    cluster_comparisons,
    cluster_models,
    cross_validate,
    cross_validate_models,
    downsample_study,
    good_bad_summary,
    simulate_cohort,
)
from .hazards import MODELS, DomainError, EvaluationError, HazardModel, get_model, resolve_models
from .inference import FitConfig, FitError, FitResult, fit, log_likelihood, neg_ll_gradient
from .selection import ModelComparison, Support, compare, support_category
