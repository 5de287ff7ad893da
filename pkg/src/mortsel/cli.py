"""Command-line front end.

Subcommands: ``fit``, ``cv``, ``simulate`` and ``study`` (``batch``,
``downsample``, ``cluster``, ``summary``). Every run writes its outputs plus
a ``manifest.json`` recording the command line, inputs, configuration and
output files. Exit codes: 0 success, 2 usage or validation error, 3
numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .cohort import CohortDataError, read_cohort_dir, read_cohort_file, to_csv, central_death_rates
from .experiments import (
    CVError,
    StudyTable,
    batch_fit,
    cluster_comparisons,
    comparisons_from_table,
    cross_validate_models,
    cv_table,
    downsample_study,
    good_bad_summary,
    simulate_cohort,
)
from .formatting import fmt
from .hazards import MODEL_TOKENS, DomainError, EvaluationError, get_model, resolve_models
from .inference import FitConfig, FitError, fit
from .selection import compare

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


class UsageError(Exception):
    pass


def _err(msg):
    print(f"mortsel: {msg}", file=sys.stderr)


class _Run:
    """Collects outputs and writes the manifest."""

    def __init__(self, args, argv, out_dir):
        self.args = args
        self.argv = list(argv)
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.outputs: list[str] = []
        self.inputs: list[str] = []
        self.models: list[str] = []
        self.config: dict = {}

    def write(self, name, text):
        path = self.out / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        self.outputs.append(str(path))
        return path

    def manifest(self):
        data = {
            "command": self.argv,
            "inputs": self.inputs,
            "models": self.models,
            "config": self.config,
            "version": __version__,
            "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "outputs": self.outputs,
        }
        (self.out / "manifest.json").write_text(json.dumps(data, indent=2) + "\n")


def _fit_config(args) -> FitConfig:
    return FitConfig(
        n_random_starts=args.starts,
        max_iterations=args.max_iter,
        seed=args.seed,
        include_binomial_constant=not args.no_binomial_constant,
    )


def _config_dict(cfg: FitConfig) -> dict:
    return {
        "seed": cfg.seed,
        "n_random_starts": cfg.n_random_starts,
        "max_iterations": cfg.max_iterations,
        "gradient_tolerance": cfg.gradient_tolerance,
        "relative_ll_tolerance": cfg.relative_ll_tolerance,
        "include_binomial_constant": cfg.include_binomial_constant,
        "gradient": cfg.gradient,
    }


def _models(spec, exclude=None):
    try:
        models = resolve_models(spec)
        drop = {m.token for m in resolve_models(exclude)} if exclude else set()
    except KeyError as exc:
        raise UsageError(exc.args[0]) from None
    models = [m for m in models if m.token not in drop]
    if not models:
        raise UsageError("no models left to fit")
    return models


def _load(path, args):
    ds = read_cohort_file(path)
    overrides = {k: getattr(args, k) for k in ("country", "sex", "cohort_year") if getattr(args, k, None) is not None}
    if overrides:
        meta = ds.metadata() | overrides
        ds = type(ds)(ds.ages, ds.survivors, ds.deaths, meta["country"], meta["sex"],
                      int(meta["cohort_year"]), meta["age_offset"])
    return ds


def _curves_csv(d, fits) -> str:
    """Tidy per-age data for plotting: observed rates and each model's fit."""
    rates = central_death_rates(d)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["age", "model", "survivors", "deaths", "central_rate", "hazard_mid", "q", "predicted_deaths"])
    for f in fits:
        m = get_model(f.model)
        hz = m.hazard(f.theta_nat, d.z + 0.5)
        q = np.atleast_1d(m.death_prob(f.theta_nat, d.z))
        for i, age in enumerate(d.ages):
            w.writerow([int(age), m.name, int(d.survivors[i]), int(d.deaths[i]), fmt(rates.rates[i]),
                        fmt(hz[i]), fmt(q[i]), fmt(f.predicted_deaths[i])])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Commands


def cmd_fit(args, run: _Run) -> int:
    spec = "all" if args.all_models else (args.model or "all")
    models = _models(spec)
    d = _load(args.data, args)
    cfg = _fit_config(args)
    run.inputs.append(str(args.data))
    run.models = [m.name for m in models]
    run.config = _config_dict(cfg)
    fits, failed = [], []
    for m in models:
        try:
            res = fit(m, d, cfg)
        except FitError as exc:
            _err(str(exc))
            failed.append(m.name)
            continue
        fits.append(res)
        run.write(f"{d.cohort_id}_{m.token}.json", res.to_json() + "\n")
    if len(fits) >= 2:
        cmp = compare(fits, metadata=d.metadata())
        run.write(f"{d.cohort_id}_comparison.csv", cmp.to_csv())
        run.write(f"{d.cohort_id}_comparison.json", cmp.to_json() + "\n")
    if fits:
        run.write(f"{d.cohort_id}_curves.csv", _curves_csv(d, fits))
    return EXIT_NUMERIC if failed else EXIT_OK


def cmd_cv(args, run: _Run) -> int:
    if args.folds < 2:
        raise UsageError(f"K must be >= 2, got {args.folds}")
    models = _models(args.models, args.exclude)
    d = _load(args.data, args)
    cfg = _fit_config(args)
    run.inputs.append(str(args.data))
    run.models = [m.name for m in models]
    run.config = _config_dict(cfg) | {"folds": args.folds, "fold_seed": args.seed}
    try:
        results = cross_validate_models(d, models, args.folds, args.seed, cfg, args.workers)
    except CVError as exc:
        _err(f"{exc} (fold {exc.fold})")
        return EXIT_NUMERIC
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    run.write(f"{d.cohort_id}_cv.csv", cv_table(results, d.cohort_id).to_csv())
    return EXIT_OK


def cmd_simulate(args, run: _Run) -> int:
    m = _models(args.model)[0]
    try:
        params = json.loads(args.params)
    except json.JSONDecodeError as exc:
        raise UsageError(f"--params is not valid JSON: {exc}") from None
    theta = m.from_dict(params) if isinstance(params, dict) else m.check_natural(params)
    lo, hi = args.ages
    ages = range(lo, hi + 1)
    d = simulate_cohort(m, theta, args.n0, ages, args.seed, country=args.country or "SIM",
                        sex=args.sex or "total", cohort_year=args.cohort_year or 0)
    run.models = [m.name]
    run.config = {"seed": args.seed, "n0": args.n0, "params": m.as_dict(theta), "ages": [lo, hi]}
    run.write(f"{d.cohort_id}.csv", to_csv(d))
    run.write(f"{d.cohort_id}.json", json.dumps(d.metadata(), indent=2) + "\n")
    return EXIT_OK


def _batch_from_dir(args, run: _Run):
    datasets = read_cohort_dir(args.dir)
    if not datasets:
        raise UsageError(f"no {{country}}_{{sex}}_{{cohort}}.csv files in {args.dir}")
    models = _models(args.models)
    cfg = _fit_config(args)
    run.inputs.extend(sorted(str(p) for p in Path(args.dir).glob("*.csv")))
    run.models = [m.name for m in models]
    run.config = _config_dict(cfg)
    res = batch_fit(datasets, models, cfg, args.workers)
    for (cohort, model), msg in res.failures.items():
        _err(f"{cohort} {model}: {msg}")
    return res


def _comparisons(args, run: _Run):
    if args.batch:
        run.inputs.append(str(args.batch))
        return comparisons_from_table(StudyTable.from_csv(Path(args.batch).read_text()))
    if args.dir:
        res = _batch_from_dir(args, run)
        run.write("batch.csv", res.table.to_csv())
        return res.comparison_list()
    raise UsageError("give --batch FILE or --dir DIR")


def cmd_study_batch(args, run: _Run) -> int:
    res = _batch_from_dir(args, run)
    run.write("batch.csv", res.table.to_csv())
    for cid, cmp in res.comparisons.items():
        run.write(f"comparisons/{cid}.csv", cmp.to_csv())
    comps = res.comparison_list()
    if comps:
        run.write("summary.csv", good_bad_summary(comps, ["all", "sex", "country"]).to_csv())
    return EXIT_OK


def cmd_study_downsample(args, run: _Run) -> int:
    d = _load(args.data, args)
    models = _models(args.models)
    cfg = _fit_config(args)
    try:
        fractions = [float(x) for x in args.fractions.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"--fractions must be comma-separated numbers, got {args.fractions!r}") from None
    run.inputs.append(str(args.data))
    run.models = [m.name for m in models]
    run.config = _config_dict(cfg) | {"fractions": fractions, "replicates": args.replicates}
    res = downsample_study(d, fractions, models, args.seed, args.replicates, cfg, args.workers)
    for key, msg in res.failures.items():
        _err(f"fraction {key[0]} replicate {key[1]} {key[2]}: {msg}")
    run.write("downsample.csv", res.table.to_csv())
    run.write("downsample_summary.csv", res.summary.to_csv())
    return EXIT_OK


def cmd_study_cluster(args, run: _Run) -> int:
    comps = _comparisons(args, run)
    if not comps:
        raise UsageError("no cohort comparisons to cluster")
    tree = cluster_comparisons(comps)
    run.write("dendrogram.json", tree.to_json() + "\n")
    run.write("dendrogram.nwk", tree.newick() + "\n")
    return EXIT_OK


def cmd_study_summary(args, run: _Run) -> int:
    comps = _comparisons(args, run)
    if not comps:
        raise UsageError("no cohort comparisons to summarize")
    groups = [g.strip() for g in args.by.split(",") if g.strip()]
    try:
        table = good_bad_summary(comps, groups)
    except KeyError as exc:
        raise UsageError(exc.args[0]) from None
    run.write("summary.csv", table.to_csv())
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser


def _age_range(text):
    try:
        lo, hi = (int(x) for x in text.split("-"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected FIRST-LAST, got {text!r}") from None
    if hi < lo:
        raise argparse.ArgumentTypeError("last age before first age")
    return lo, hi


def _fit_options(p):
    p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    p.add_argument("--starts", type=int, default=10, help="random starts besides the heuristic one (default 10)")
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--no-binomial-constant", action="store_true",
                   help="drop the parameter-free binomial term from log-likelihoods")
    p.add_argument("--out", default=".", help="output directory (default .)")


def _labels(p):
    p.add_argument("--country")
    p.add_argument("--sex", choices=("female", "male", "total"))
    p.add_argument("--cohort-year", type=int)


def _workers(p):
    p.add_argument("--workers", type=int, default=None,
                   help="worker processes (default: $MORTSEL_WORKERS or 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mortsel", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    models_help = f"comma-separated models or 'all' ({', '.join(MODEL_TOKENS)})"

    p = sub.add_parser("fit", help="fit models to one cohort")
    p.add_argument("--data", required=True)
    p.add_argument("--model", help=models_help)
    p.add_argument("--all-models", action="store_true")
    _labels(p)
    _fit_options(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("cv", help="K-fold cross-validation on one cohort")
    p.add_argument("--data", required=True)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--models", default="all", help=models_help)
    p.add_argument("--exclude", help="models to leave out")
    _labels(p)
    _fit_options(p)
    _workers(p)
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("simulate", help="simulate a cohort from a model")
    p.add_argument("--model", required=True)
    p.add_argument("--params", required=True, help='JSON object, e.g. \'{"alpha": 0.05, "beta": 0.11}\'')
    p.add_argument("--n0", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ages", type=_age_range, default=(80, 104), help="FIRST-LAST (default 80-104)")
    _labels(p)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_simulate)

    study = sub.add_parser("study", help="multi-cohort studies").add_subparsers(dest="study", required=True)

    p = study.add_parser("batch", help="fit all cohorts in a directory")
    p.add_argument("--dir", required=True)
    p.add_argument("--models", default="all", help=models_help)
    _fit_options(p)
    _workers(p)
    p.set_defaults(func=cmd_study_batch)

    p = study.add_parser("downsample", help="refit thinned copies of one cohort")
    p.add_argument("--data", required=True)
    p.add_argument("--fractions", default="1.0,0.5,0.3,0.1")
    p.add_argument("--replicates", type=int, default=1)
    p.add_argument("--models", default="all", help=models_help)
    _labels(p)
    _fit_options(p)
    _workers(p)
    p.set_defaults(func=cmd_study_downsample)

    for name, func, helptext in (("cluster", cmd_study_cluster, "cluster models by delta-AIC"),
                                 ("summary", cmd_study_summary, "support fractions per model")):
        p = study.add_parser(name, help=helptext)
        src = p.add_mutually_exclusive_group(required=True)
        src.add_argument("--batch", help="batch.csv from 'study batch'")
        src.add_argument("--dir", help="directory of cohort CSVs (fitted first)")
        p.add_argument("--models", default="all", help=models_help)
        if name == "summary":
            p.add_argument("--by", default="all,sex,country", help="groupings (default all,sex,country)")
        _fit_options(p)
        _workers(p)
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "starts", 0) < 0 or getattr(args, "max_iter", 1) <= 0:
        _err("--starts must be >= 0 and --max-iter positive")
        return EXIT_USAGE
    if getattr(args, "n0", 1) <= 0:
        _err(f"--n0 must be positive, got {args.n0}")
        return EXIT_USAGE
    try:
        run = _Run(args, argv, args.out)
        code = args.func(args, run)
        run.manifest()
        return code
    except (UsageError, CohortDataError, DomainError, FileNotFoundError, KeyError, ValueError) as exc:
        _err(exc.args[0] if exc.args else str(exc))
        return EXIT_USAGE
    except (FitError, EvaluationError, ArithmeticError) as exc:
        _err(str(exc))
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
