"""Thin a cohort, watch delta-AIC move, then cluster models by their
delta-AIC patterns across a few cohorts.

Smaller cohorts carry less information, so the AIC penalty weighs more
and simpler models gain ground. The dendrogram groups models whose
support rises and falls together.

    python demos/downsampling_and_clustering.py
"""

from mortsel import FitConfig, batch_fit, cluster_comparisons, downsample_study, simulate_cohort

MODELS = ["gompertz", "kannisto", "beard", "logquad", "lynchbrown"]
CONFIG = FitConfig(n_random_starts=4)


def main():
    d = simulate_cohort("beard", (0.05, 0.12, 0.03), 100_000, seed=3, country="FRA", sex="female", cohort_year=1872)
    res = downsample_study(d, [1.0, 0.3, 0.1, 0.03], MODELS, seed=0, replicates=3, config=CONFIG)
    print("mean delta-AIC by fraction of the cohort kept")
    print(f"{'fraction':>9}" + "".join(f"{m:>12}" for m in MODELS))
    for f in (1.0, 0.3, 0.1, 0.03):
        row = [res.summary.get(d.cohort_id, f, name, "mean_delta_aic")
               for name in ("Gompertz", "Kannisto", "Beard", "Log-Quadratic", "Lynch-Brown")]
        print(f"{f:>9}" + "".join(f"{v:>12.2f}" for v in row))

    cohorts = [
        simulate_cohort(model, theta, 30_000, seed=i, country="SIM", sex="total", cohort_year=i)
        for i, (model, theta) in enumerate([
            ("gompertz", (0.05, 0.11)),
            ("kannisto", (0.06, 0.12)),
            ("beard", (0.05, 0.12, 0.03)),
            ("logquad", (-3.0, 0.12, -0.002)),
        ])
    ]
    batch = batch_fit(cohorts, MODELS, CONFIG)
    tree = cluster_comparisons(batch.comparison_list())
    print("\nmerge order (height):")
    for members, h in zip(tree.clusters(), tree.heights):
        print(f"  {sorted(members)}  {h:.2f}")
    print("\nNewick:", tree.newick())


if __name__ == "__main__":
    main()
