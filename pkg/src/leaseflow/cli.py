"""Command line driver: run a scenario, check the corpus, compare two runs.

Thin and synchronous; all the work lives in the library modules. Exit codes
are part of the interface:

  0  success
  1  validation failure (bad arguments, bad scenario, non-comparable pair)
  2  protocol violation during a run
  3  checker counterexample (or a topology over its state cap)

The default output directory is ``--out`` if given, else ``$LEASEFLOW_OUT``,
else ``./leaseflow-out``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import List, Optional

from .checker import CheckerError, check_topology
from .metrics import MetricsReport
from .scenario import (
    ScenarioError,
    comparison_conflicts,
    load_scenario,
    run_scenario,
)
from .sim import SimulationError

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_PROTOCOL = 2
EXIT_FINDING = 3

OUT_ENV = "LEASEFLOW_OUT"
TRACE_TAIL_LINES = 20


class _Parser(argparse.ArgumentParser):
    # Usage problems are validation failures, not protocol ones; argparse
    # would exit 2, which this interface reserves.
    def error(self, message: str):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_VALIDATION)


def _default_out(explicit: Optional[str]) -> str:
    return explicit or os.environ.get(OUT_ENV) or "leaseflow-out"


def _print_trace_tail(out_dir: str) -> None:
    path = os.path.join(out_dir, "trace.tsv")
    if not os.path.exists(path):
        return
    tail = open(path).read().splitlines()[-TRACE_TAIL_LINES:]
    print(f"--- trace tail ({path}) ---", file=sys.stderr)
    for line in tail:
        print(line, file=sys.stderr)


def cmd_run(args) -> int:
    out_dir = _default_out(args.out)
    try:
        sc = load_scenario(args.scenario)
    except ScenarioError as e:
        for line in e.errors:
            print(f"{args.scenario}: {line}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        result = run_scenario(sc, out_dir=out_dir, trace=args.trace,
                              seed=args.seed)
    except SimulationError as e:
        print(f"protocol violation: {e}", file=sys.stderr)
        _print_trace_tail(out_dir)
        return EXIT_PROTOCOL
    rep = result.report
    print(f"{sc.name}: seed={result.seed} injected={rep.injected} "
          f"completed={rep.completed} forwarded={rep.forwarded}")
    for job, stats in sorted(rep.jobs.items()):
        print(f"  {job}: p99={stats.p99_ms:.3f}ms "
              f"satisfaction_rate={stats.satisfaction_rate:.4f} "
              f"throughput={stats.throughput_hz:.0f}/s")
    for name in ("metrics", "summary", "trace"):
        if name in result.files:
            print(f"  wrote {result.files[name]}")
    return EXIT_OK


def cmd_check(args) -> int:
    root = Path(args.corpus)
    if not root.is_dir():
        print(f"error: {root} is not a directory", file=sys.stderr)
        return EXIT_VALIDATION
    paths = sorted(root.glob("*.json"))
    if not paths:
        print(f"{root}: 0 topologies")
        return EXIT_OK
    results = []
    failed = 0
    for path in paths:
        try:
            r = check_topology(path, mutant=args.mutant, cap=args.cap)
        except (CheckerError, ValueError) as e:
            print(f"error: {path}: {e}", file=sys.stderr)
            return EXIT_VALIDATION
        results.append(r)
        if r.ok:
            paths_note = f" paths={r.paths}" if r.paths is not None else ""
            print(f"ok    {r.name}: states={r.states}{paths_note} "
                  f"({r.elapsed_s:.2f}s)")
        else:
            failed += 1
            print(f"FAIL  {r.name}: {r.violation}")
            for step in r.counterexample:
                print(f"        {step}")
    total_states = sum(r.states for r in results)
    print(f"{len(results)} topologies, {total_states} states explored, "
          f"{failed} findings")
    if args.json or failed:
        out_path = args.json or os.path.join(_default_out(None),
                                             "findings.json")
        os.makedirs(os.path.dirname(out_path) or ".", exist_ok=True)
        with open(out_path, "w") as fh:
            json.dump([r.to_dict() for r in results], fh, indent=2)
            fh.write("\n")
        print(f"wrote {out_path}")
    return EXIT_FINDING if failed else EXIT_OK


def _metric_rows(report_a: MetricsReport, report_b: MetricsReport,
                 metric: str, job: Optional[str]) -> List[tuple]:
    if job is None and not metric.startswith("sync_") \
            and metric not in ("injected", "completed", "forwarded",
                               "horizon_ms", "utilization_max"):
        jobs = sorted(set(report_a.jobs) & set(report_b.jobs))
        if len(jobs) > 1:
            return [(j, report_a.lookup(metric, j), report_b.lookup(metric, j))
                    for j in jobs]
    return [(job or "", report_a.lookup(metric, job),
             report_b.lookup(metric, job))]


def cmd_compare(args) -> int:
    try:
        sc_a = load_scenario(args.scenario_a)
        sc_b = load_scenario(args.scenario_b)
    except ScenarioError as e:
        for line in e.errors:
            print(f"error: {line}", file=sys.stderr)
        return EXIT_VALIDATION
    conflicts = comparison_conflicts(sc_a, sc_b)
    if conflicts:
        print("error: scenarios differ outside the declared sweep dimensions:",
              file=sys.stderr)
        for path in conflicts:
            print(f"  {path}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        rep_a = run_scenario(sc_a, seed=args.seed).report
        rep_b = run_scenario(sc_b, seed=args.seed).report
        rows = _metric_rows(rep_a, rep_b, args.metric, args.job)
    except SimulationError as e:
        print(f"protocol violation: {e}", file=sys.stderr)
        return EXIT_PROTOCOL
    except KeyError as e:
        print(f"error: {e.args[0]}", file=sys.stderr)
        return EXIT_VALIDATION
    name_a = sc_a.name or "A"
    name_b = sc_b.name or "B"
    print(f"{'job':<16} {'metric':<20} {name_a:>14} {name_b:>14} {'delta':>14}")
    for job, va, vb in rows:
        print(f"{job:<16} {args.metric:<20} {va:>14.6g} {vb:>14.6g} "
              f"{vb - va:>+14.6g}")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    parser = _Parser(prog="leaseflow",
                     description="Deterministic dataflow simulator and "
                                 "protocol checker")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario file")
    p_run.add_argument("scenario", help="path to a scenario TOML file")
    p_run.add_argument("--out", help=f"output directory (default ${OUT_ENV} "
                                     f"or ./leaseflow-out)")
    p_run.add_argument("--trace", action="store_true",
                       help="also write trace.tsv")
    p_run.add_argument("--seed", type=int, help="override the scenario seed")
    p_run.set_defaults(fn=cmd_run)

    p_check = sub.add_parser("check", help="explore every topology in a "
                                           "corpus directory")
    p_check.add_argument("corpus", help="directory of topology .json files")
    p_check.add_argument("--cap", type=int, help="state cap per topology")
    p_check.add_argument("--mutant", help="enable one named protocol defect")
    p_check.add_argument("--json", help="write verdicts JSON to this path")
    p_check.set_defaults(fn=cmd_check)

    p_cmp = sub.add_parser("compare", help="run two scenarios, table one "
                                           "metric")
    p_cmp.add_argument("scenario_a")
    p_cmp.add_argument("scenario_b")
    p_cmp.add_argument("--metric", required=True,
                       help="e.g. p99_ms, satisfaction_rate, sync_mean_ms")
    p_cmp.add_argument("--job", help="job id when a scenario has several")
    p_cmp.add_argument("--seed", type=int, help="override both seeds")
    p_cmp.set_defaults(fn=cmd_compare)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":  # pragma: no cover - module entry
    raise SystemExit(main())
