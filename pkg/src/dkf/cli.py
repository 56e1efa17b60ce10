"""Command-line interface.

    dkf run --scenario sec61 --algo esdkf,esdkf-et --runs 100 --seed 42 --out out/
    dkf validate --scenario scenario.json
    dkf check-observability --scenario sec61 --alpha 2 --nbar 10

``run`` writes one metrics CSV per algorithm into the output directory
and renders the matching figures next to them (``--no-plots`` skips the
figures).  The ``DKF_THREADS`` environment variable caps the Monte-Carlo
worker count.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from .assumptions import validate_assumptions
from .errors import ValidationError
from .model import check_collective_observability, check_rank_condition
from .report import emit_csv, emit_node_log, render_figures
from .runner import ALGO_KEYS, run_monte_carlo, worker_count
from .scenario import load_scenario


def _add_scenario_arg(p: argparse.ArgumentParser):
    p.add_argument("--scenario", required=True,
                   help="preset name (sec61, sec62_situation1, sec62_situation2, sec63) "
                        "or path to a scenario JSON file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dkf", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="Monte-Carlo simulation of the configured scenario")
    _add_scenario_arg(run_p)
    run_p.add_argument("--algo", default="esdkf",
                       help=f"comma-separated algorithms from {ALGO_KEYS}")
    run_p.add_argument("--runs", type=int, default=None, help="Monte-Carlo runs")
    run_p.add_argument("--seed", type=int, default=None, help="master seed")
    run_p.add_argument("--out", required=True, help="output directory")
    run_p.add_argument("--delta", type=float, default=None,
                       help="override the quantization step for every sensor")
    run_p.add_argument("--horizon", type=int, default=None, help="override the horizon")
    run_p.add_argument("--tau", type=float, default=None, help="override the trigger threshold")
    run_p.add_argument("--threads", type=int, default=None, help="worker threads")
    run_p.add_argument("--no-plots", action="store_true", help="skip figure rendering")
    run_p.add_argument("--node-log", action="store_true",
                       help="also write per-run node records (large)")

    val_p = sub.add_parser("validate", help="check scenario assumptions and report verdicts")
    _add_scenario_arg(val_p)

    obs_p = sub.add_parser("check-observability",
                           help="collective observability margins and rank verdict")
    _add_scenario_arg(obs_p)
    obs_p.add_argument("--alpha", type=float, default=None, help="observability level")
    obs_p.add_argument("--nbar", type=int, default=None, help="window length")
    obs_p.add_argument("--at", type=int, default=None, help="window start time k")
    return parser


def cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    scenario = scenario.with_overrides(
        horizon=args.horizon, tau=args.tau, delta=args.delta,
        runs=args.runs, seed=args.seed,
    )
    algos = [a.strip() for a in args.algo.split(",") if a.strip()]
    t0 = time.perf_counter()
    results = run_monte_carlo(
        scenario, algos, threads=args.threads, keep_raw=args.node_log,
    )
    elapsed = time.perf_counter() - t0
    wrote = []
    for name, res in results.items():
        wrote.append(emit_csv(res.series, Path(args.out) / f"{name}.csv"))
        if args.node_log:
            log = emit_node_log(res, args.out)
            if log:
                wrote.append(log)
    if not args.no_plots:
        wrote += render_figures(results, args.out)
    runs = scenario.monte_carlo.runs if args.runs is None else args.runs
    print(f"scenario={scenario.name} runs={runs} horizon={scenario.horizon} "
          f"workers={worker_count(args.threads)} elapsed={elapsed:.1f}s")
    for p in wrote:
        print(f"wrote {p}")
    return 0


def cmd_validate(args) -> int:
    scenario = load_scenario(args.scenario)
    report = validate_assumptions(scenario)
    for line in report.lines():
        print(line)
    n_fail = len(report.failures())
    print(f"summary: {len(report.checks)} checks, {n_fail} failed")
    return 0


def cmd_check_observability(args) -> int:
    scenario = load_scenario(args.scenario)
    v = scenario.validation
    alpha = v.alpha if args.alpha is None else args.alpha
    nbar = v.nbar if args.nbar is None else args.nbar
    at_k = v.at_k if args.at is None else args.at
    ext = scenario.extended_model()
    res = check_collective_observability(ext, at_k, nbar, alpha)

    mc = scenario.model
    time_invariant = mc.a_bar.select is None and mc.g_bar.select is None and all(
        b.select is None for b in mc.h_banks
    )
    if time_invariant:
        import numpy as np

        h_stack = np.vstack([mc.h_bar(0, i) for i in range(mc.n_sensors)])
        rank = check_rank_condition(mc.a_bar.at(0), mc.g_bar.at(0), h_stack)
        rank_cells = (str(rank.rank), "yes" if rank.holds else "no")
    else:
        rank = None
        rank_cells = ("n/a (time-varying)", "n/a")

    rows = [
        ("alpha", f"{alpha:g}"),
        ("window", str(nbar)),
        ("start k", str(at_k)),
        ("margin1", f"{res.margin1:.6g}"),
        ("margin2", f"{res.margin2:.6g}"),
        ("observable", "yes" if res.holds else "no"),
        ("rank", rank_cells[0]),
        ("rank condition", rank_cells[1]),
    ]
    width = max(len(r[0]) for r in rows)
    for name, value in rows:
        print(f"{name:<{width}}  {value}")
    print()
    print(f"margin1={res.margin1!r}")
    print(f"margin2={res.margin2!r}")
    print(f"observable={'true' if res.holds else 'false'}")
    if rank is not None:
        print(f"rank={rank.rank}")
        print(f"rank_holds={'true' if rank.holds else 'false'}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args)
        if args.command == "validate":
            return cmd_validate(args)
        if args.command == "check-observability":
            return cmd_check_observability(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
