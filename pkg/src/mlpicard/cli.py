"""Command-line interface.

Subcommands: run (experiment from a TOML config), verify (statistical and
cost suites), fit (convergence summary of a result CSV), cost (closed-form
draw count), select-level (accuracy-driven diagonal level).  Exit codes:
0 ok, 1 test or bound failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import sys
import time

from .bounds import cost_bound, cost_formula, select_level
from .errors import LevelCapError, UsageError
from .harness import (
    RunRecord,
    convergence_fit,
    load_config,
    parse_csv,
    records_to_csv,
    run_experiment,
    verify,
    verify_report_csv,
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mlpicard",
        description="Multilevel Picard solver for semilinear parabolic PDEs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the experiment described by a config file")
    p_run.add_argument("config", help="path to the TOML experiment config")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--workers", type=int, default=None)
    p_run.add_argument("--budget", type=int, default=None)
    p_run.add_argument("--override-budget", action="store_true")
    p_run.add_argument("--out", default=None, help="CSV output path (default stdout)")

    p_verify = sub.add_parser("verify", help="run verification suites")
    p_verify.add_argument(
        "suite",
        nargs="?",
        default="all",
        help="rng | cost | flow | em | mean-identity | moment | oracles | "
        "negative-controls | all",
    )
    p_verify.add_argument("--seed", type=int, default=0)
    p_verify.add_argument("--out", default=None, help="report CSV path")

    p_fit = sub.add_parser("fit", help="summarize a diagonal sweep CSV")
    p_fit.add_argument("csv_path")

    p_cost = sub.add_parser("cost", help="closed-form cost of one estimator call")
    p_cost.add_argument("d", type=int)
    p_cost.add_argument("M", type=int)
    p_cost.add_argument("n", type=int)
    p_cost.add_argument("alpha", type=float, nargs="?", default=1.0)

    p_sel = sub.add_parser("select-level", help="smallest diagonal level for epsilon")
    p_sel.add_argument("C", type=float)
    p_sel.add_argument("L", type=float)
    p_sel.add_argument("T", type=float)
    p_sel.add_argument("epsilon", type=float)
    p_sel.add_argument("--max-level", type=int, default=12)

    return parser


def _cmd_run(args) -> int:
    config = load_config(
        args.config,
        seed=args.seed,
        workers=args.workers,
        budget=args.budget,
        override_budget=args.override_budget,
        out=args.out,
    )
    t0 = time.perf_counter()
    records = run_experiment(config)
    text = records_to_csv(records, config, total_wall_s=time.perf_counter() - t0)
    if config.out_path:
        with open(config.out_path, "w") as fh:
            fh.write(text)
        skipped = sum(1 for r in records if r.status != "ok")
        print(f"wrote {len(records)} records to {config.out_path}", end="")
        print(f" ({skipped} skipped on budget)" if skipped else "")
    else:
        sys.stdout.write(text)
    return 0


def _cmd_verify(args) -> int:
    rows, status = verify(args.suite, seed=args.seed)
    report = verify_report_csv(rows)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(report)
    failed = [r for r in rows if not r.ok]
    for r in rows:
        mark = "PASS" if r.ok else "FAIL"
        print(f"[{mark}] {r.suite}: {r.name}")
    print(f"{len(rows) - len(failed)}/{len(rows)} checks ok")
    return status


def _records_from_rows(rows) -> list[RunRecord]:
    records = []
    for row in rows:
        records.append(
            RunRecord(
                dimension=int(row["d"]),
                samples_base=int(row["M"]),
                level=int(row["n"]),
                replicates=int(row["K"]),
                seed=int(row["seed"]),
                sample_mean=float(row["sample_mean"]),
                sample_std=float(row["sample_std"]),
                rmse=float(row["rmse"]),
                rmse_stderr=float(row["rmse_stderr"]),
                reference_value=float(row["reference_value"]),
                reference_method=row["reference_method"],
                reference_error=float(row["reference_error"]),
                bound=float(row["bound"]),
                predicted_cost=int(row["predicted_cost"]),
                measured_cost=int(row["measured_cost"]),
                status=row["status"],
            )
        )
    return records


def _cmd_fit(args) -> int:
    with open(args.csv_path) as fh:
        _, rows = parse_csv(fh.read())
    summary = convergence_fit(_records_from_rows(rows))
    print(f"levels: {summary.levels}")
    print(f"rmse:   {tuple(round(v, 6) for v in summary.rmses)}")
    print(f"bounds: {tuple(round(v, 6) for v in summary.bounds)}")
    print(f"log-rmse slope per level: {summary.log_rmse_slope:.4f}")
    print(f"monotone non-increasing (2-sigma): {summary.monotone}")
    print(f"below a-priori bound everywhere:   {summary.below_bound}")
    return 0 if (summary.monotone and summary.below_bound) else 1


def _cmd_cost(args) -> int:
    value = cost_formula(args.d, args.M, args.n, args.alpha)
    print(f"cost_formula({args.d}, {args.M}, {args.n}, {args.alpha}) = {value}")
    if args.n >= 1:
        print(f"cost_bound = {cost_bound(args.d, args.M, args.n, args.alpha)}")
    return 0


def _cmd_select_level(args) -> int:
    try:
        level = select_level(args.C, args.L, args.T, args.epsilon, args.max_level)
    except LevelCapError as exc:
        print(f"error: {exc} (best achievable bound {exc.best_bound:.6g})", file=sys.stderr)
        return 1
    print(level)
    return 0


_COMMANDS = {
    "run": _cmd_run,
    "verify": _cmd_verify,
    "fit": _cmd_fit,
    "cost": _cmd_cost,
    "select-level": _cmd_select_level,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
