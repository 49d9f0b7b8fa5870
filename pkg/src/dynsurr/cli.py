"""Command-line front end: simulate / estimate / experiment / report.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import exceptions as exc
from .data_model import load_panel, save_panel
from .estimators import EstimatorConfig, EstimatorKind, run_estimator
from .experiments import (
    ExperimentConfig,
    materialize_dgp,
    read_results_csv,
    render_report,
    run_experiment,
    summarize,
    write_results_csv,
    write_summary_csv,
)
from .learners import LearnerConfig

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

_CONFIG_ERRORS = (exc.ConfigError, ValueError, KeyError, json.JSONDecodeError)
_DATA_ERRORS = (exc.MalformedRow, exc.DimensionMismatch, exc.DuplicatePeriod,
                exc.MissingOutcome, exc.SettingMissing, exc.TooFewUnits,
                exc.EmptyResults, FileNotFoundError, OSError)
_NUMERIC_ERRORS = (exc.SingularBlock, exc.SingularCovariance,
                   exc.SingularJacobian, exc.SingularDesign, exc.UnstableB,
                   exc.UnstableCompanion, exc.NotSPD, exc.SingleClass,
                   exc.EmptyGrid)


def _load_json(path: str) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def cmd_simulate(args: argparse.Namespace) -> int:
    dgp = _load_json(args.config) if args.config else {
        "kind": args.dgp, "p": args.p, "k": args.k,
        "param_seed": args.param_seed,
    }
    if args.dgp is not None:
        dgp.setdefault("kind", args.dgp)
    sim, _ = materialize_dgp(dgp, args.M)
    data = sim(args.n_e, args.n_o, args.seed)
    save_panel(data, args.out, seed=args.seed)
    print(f"wrote {args.out} ({data.n_e} experimental, {data.n_o} "
          f"observational units, M={data.M})")
    return EXIT_OK


def cmd_estimate(args: argparse.Namespace) -> int:
    data = load_panel(args.data)
    learner = LearnerConfig(kind=args.learner)
    cfg = EstimatorConfig(learner=learner, alpha=args.alpha, seed=args.seed)
    report = run_estimator(EstimatorKind(args.estimator), data, cfg)
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
        print(f"wrote {args.out}")
    else:
        print(text)
    return EXIT_OK


def cmd_experiment(args: argparse.Namespace) -> int:
    config = ExperimentConfig.from_json(args.config)
    if args.seed is not None:
        config.base_seed = args.seed
    if args.jobs is not None:
        config.jobs = args.jobs
    if args.out is not None:
        config.out_dir = args.out
    if args.alpha is not None:
        config.alpha = args.alpha
    if args.estimator:
        config.estimators = args.estimator
    config.validate()
    rows = run_experiment(config, progress=not args.quiet)
    out_dir = Path(config.out_dir)
    results_path = out_dir / "results.csv"
    write_results_csv(rows, results_path)
    summary = summarize(rows)
    write_summary_csv(summary, out_dir / "summary.csv")
    n_err = sum(1 for r in rows if r["status"] != "ok")
    print(f"wrote {results_path} ({len(rows)} rows, {n_err} failures)")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    rows = read_results_csv(args.results)
    paths = render_report(rows, args.out)
    for p in paths:
        print(f"wrote {p}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dynsurr",
        description="Long-term effect estimation via dynamically adjusted "
                    "surrogate indices",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="write a synthetic panel CSV")
    sim.add_argument("--config", help="JSON file with the generator block")
    sim.add_argument("--dgp", choices=["linear", "semi_synthetic"],
                     default="linear")
    sim.add_argument("--p", type=int, default=3)
    sim.add_argument("--k", type=int, default=2)
    sim.add_argument("--M", type=int, default=2)
    sim.add_argument("--param-seed", type=int, default=1)
    sim.add_argument("--n-e", type=int, default=500)
    sim.add_argument("--n-o", type=int, default=500)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out", required=True)
    sim.set_defaults(func=cmd_simulate)

    est = sub.add_parser("estimate", help="run one estimator on a panel CSV")
    est.add_argument("data")
    est.add_argument("--estimator", default="deb_new_treat",
                     choices=[k.value for k in EstimatorKind])
    est.add_argument("--alpha", type=float, default=0.05)
    est.add_argument("--seed", type=int, default=0)
    est.add_argument("--learner", default="ols", choices=["ols", "lasso"])
    est.add_argument("--out")
    est.set_defaults(func=cmd_estimate)

    expr = sub.add_parser("experiment", help="Monte-Carlo sweep from a config")
    expr.add_argument("--config", required=True)
    expr.add_argument("--seed", type=int)
    expr.add_argument("--jobs", type=int)
    expr.add_argument("--out")
    expr.add_argument("--alpha", type=float)
    expr.add_argument("--estimator", action="append",
                      choices=[k.value for k in EstimatorKind])
    expr.add_argument("--quiet", action="store_true")
    expr.set_defaults(func=cmd_experiment)

    rep = sub.add_parser("report", help="summary tables and plots from results")
    rep.add_argument("results")
    rep.add_argument("--out", required=True)
    rep.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _NUMERIC_ERRORS as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except _DATA_ERRORS as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except _CONFIG_ERRORS as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
