"""Fit all nine hazard models to one cohort and print the comparison table.

Without arguments a Gompertz cohort is simulated; pass a cohort CSV
(age,survivors,deaths) to use real data instead:

    python demos/fit_one_cohort.py [path/to/DNK_male_1895.csv]
"""

import sys

from mortsel import MODELS, FitConfig, compare, fit, read_cohort_file, simulate_cohort


def load():
    if len(sys.argv) > 1:
        return read_cohort_file(sys.argv[1])
    return simulate_cohort("gompertz", (0.05, 0.11), 50_000, seed=1, country="SIM", sex="female", cohort_year=1900)


def main():
    d = load()
    print(f"cohort {d.cohort_id}: {d.size} alive at age {d.ages[0]}, {d.deaths.sum()} deaths by {d.ages[-1]}")

    fits = [fit(m, d, FitConfig(seed=0)) for m in MODELS]
    cmp = compare(fits)

    print(f"\n{'model':<14}{'k':>3}{'loglik':>14}{'AIC':>14}{'dAIC':>10}  support")
    for r in sorted(cmp.rows, key=lambda r: r.aic_rank):
        print(f"{r.model:<14}{r.k:>3}{r.loglik:>14.2f}{r.aic:>14.2f}{r.delta_aic:>10.2f}  {r.support}")

    best = next(f for f in fits if f.model == cmp.best_model)
    print(f"\nbest model {best.model}: " + ", ".join(f"{k}={v:.5g}" for k, v in best.params.items()))
    print("observed vs predicted deaths at the first five ages:")
    for age, obs, pred in list(zip(d.ages, d.deaths, best.predicted_deaths))[:5]:
        print(f"  {age}: {obs:>7d} {pred:>10.1f}")


if __name__ == "__main__":
    main()
