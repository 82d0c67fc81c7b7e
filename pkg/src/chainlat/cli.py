"""Command-line front end over chain documents.

Subcommands: validate, evaluate, simulate, compare, optimize. Human tables
go to stdout; ``--out`` writes the full machine report as JSON, ``--csv``
and ``--reps-csv`` write delimited rows, and ``--plot`` renders a figure
file next to them.

Exit codes: 0 success, 1 parse or validation error, 2 instability,
3 I/O error, 4 search-space cap exceeded.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Sequence, TextIO

from . import report as reporting
from .analytic import StabilityReport, response_times, stability_check
from .compose import CompositionResult, Objective, optimize_exhaustive, selfish_baseline
from .document import ChainDocument, parse_chain_document
from .errors import (
    IncompleteAssignment,
    InvalidChain,
    InvalidConfig,
    InvalidProbabilities,
    NoStableAssignment,
    ParseError,
    SearchSpaceTooLarge,
    SemanticError,
    Unstable,
)
from .model import BranchMode, IterationConvention
from .simulate import ComparisonReport, SimConfig, SimReport, compare, little_check, simulate

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_UNSTABLE = 2
EXIT_IO = 3
EXIT_CAP = 4

_MODES = {m.value: m for m in BranchMode}
_CONVENTIONS = {c.value: c for c in IterationConvention}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse variant that reports usage problems instead of exiting."""

    def error(self, message):
        raise _UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="chainlat", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("file", help="chain document (JSON)")
        p.add_argument("--out", metavar="FILE.json", help="write the machine report as JSON")

    def add_eval_options(p):
        p.add_argument("--mode", choices=sorted(_MODES), default=None,
                       help="branch aggregation mode (default: per command)")
        p.add_argument("--iteration", choices=sorted(_CONVENTIONS), default=None,
                       help="iteration time convention (default: total)")

    def add_sim_options(p):
        p.add_argument("--seed", type=int, required=True, help="master random seed")
        p.add_argument("--jobs-per-task", type=int, default=20_000, metavar="N")
        p.add_argument("--replications", type=int, default=10, metavar="R")
        p.add_argument("--warmup", type=float, default=0.2, metavar="F",
                       help="fraction of each task's jobs discarded as warm-up")
        p.add_argument("--confidence", type=float, default=0.95, metavar="C")
        p.add_argument("--jobs", type=int, default=1, metavar="N",
                       help="worker processes for concurrent replications")
        p.add_argument("--reps-csv", metavar="FILE.csv", help="write per-replication task means")
        p.add_argument("--plot", metavar="FILE.png", help="render a figure file")

    p = sub.add_parser("validate", help="check a chain document")
    add_common(p)
    p.set_defaults(handler=cmd_validate)

    p = sub.add_parser("evaluate", help="analytic per-task response times")
    add_common(p)
    add_eval_options(p)
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("simulate", help="discrete-event simulation")
    add_common(p)
    add_sim_options(p)
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("compare", help="analytic predictions vs simulation")
    add_common(p)
    add_eval_options(p)
    add_sim_options(p)
    p.add_argument("--csv", metavar="FILE.csv", help="write per-task comparison rows")
    p.set_defaults(handler=cmd_compare)

    p = sub.add_parser("optimize", help="search assignments")
    add_common(p)
    add_eval_options(p)
    p.add_argument("--objective", choices=[o.value for o in Objective], default="minmax")
    p.add_argument("--selfish", action="store_true",
                   help="each task plans alone, then plans run together")
    p.add_argument("--cap", type=int, default=1_000_000, help="enumeration cap")
    p.set_defaults(handler=cmd_optimize)

    return parser


def run_command(
    argv: Sequence[str] | None = None,
    stdout: TextIO | None = None,
    stderr: TextIO | None = None,
) -> int:
    """Dispatch one invocation; returns the exit code instead of exiting."""
    argv = list(argv) if argv is not None else sys.argv[1:]
    out = stdout if stdout is not None else sys.stdout
    err = stderr if stderr is not None else sys.stderr

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=err)
        return EXIT_INVALID
    except SystemExit as exc:  # --help
        return int(exc.code or 0)

    args.echo = ["chainlat"] + argv
    try:
        return args.handler(args, out, err)
    except (ParseError, SemanticError, InvalidChain, IncompleteAssignment,
            InvalidProbabilities, InvalidConfig, ValueError) as exc:
        print(f"error: {exc}", file=err)
        return EXIT_INVALID
    except (Unstable, NoStableAssignment) as exc:
        print(f"error: {exc}", file=err)
        return EXIT_UNSTABLE
    except SearchSpaceTooLarge as exc:
        print(f"error: {exc}", file=err)
        return EXIT_CAP
    except OSError as exc:
        print(f"error: {exc}", file=err)
        return EXIT_IO


def main() -> None:
    sys.exit(run_command())


# ---------------------------------------------------------------------------
# helpers


def _read_document(path: str) -> ChainDocument:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_chain_document(fh.read())


def _write_json(payload: dict, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _resolve_mode(args, doc: ChainDocument, default: BranchMode) -> BranchMode:
    if getattr(args, "mode", None) is not None:
        return _MODES[args.mode]
    if doc.options.branch_mode is not None:
        return doc.options.branch_mode
    return default


def _resolve_convention(args, doc: ChainDocument) -> IterationConvention:
    if getattr(args, "iteration", None) is not None:
        return _CONVENTIONS[args.iteration]
    if doc.options.iteration is not None:
        return doc.options.iteration
    return IterationConvention.TOTAL_SOJOURN


def _sim_config(args) -> SimConfig:
    return SimConfig(
        seed=args.seed,
        jobs_per_task=args.jobs_per_task,
        warmup_fraction=args.warmup,
        replications=args.replications,
        confidence_level=args.confidence,
        workers=args.jobs,
    )


def _stability_dict(stab: StabilityReport) -> dict:
    return {
        "stable": stab.stable,
        "stations": [
            {
                "step": s.step_id,
                "candidate": s.candidate_id,
                "candidate_index": s.candidate_index,
                "lambda_eff": s.lambda_eff,
                "mu": s.mu,
                "rho": s.rho,
                "stable": s.stable,
            }
            for s in stab.stations
        ],
    }


def _sim_dict(report: SimReport) -> dict:
    return {
        "config": {
            "seed": report.config.seed,
            "jobs_per_task": report.config.jobs_per_task,
            "warmup_fraction": report.config.warmup_fraction,
            "replications": report.config.replications,
            "confidence_level": report.config.confidence_level,
        },
        "tasks": {
            tid: {
                "mean": s.mean,
                "ci_halfwidth": s.ci_halfwidth,
                "count": s.count,
                "replication_means": list(s.replication_means),
            }
            for tid, s in report.tasks.items()
        },
        "stations": [
            {
                "step": st.step_id,
                "candidate": st.candidate_id,
                "utilization": st.utilization,
                "mean_jobs": st.mean_jobs,
                "mean_sojourn": st.mean_sojourn,
                "throughput": st.throughput,
                "visits": st.visits,
                "lambda_eff": st.lambda_eff,
                "mu": st.mu,
                "rho": st.rho,
            }
            for st in report.stations
        ],
        "little_residuals": {label: value for label, value in little_check(report)},
    }


def _comparison_dict(cmp: ComparisonReport) -> dict:
    return {
        "all_within_ci": cmp.all_within_ci,
        "tasks": [
            {
                "task": t.task_id,
                "analytic": t.analytic,
                "simulated": t.simulated,
                "ci_halfwidth": t.ci_halfwidth,
                "rel_error": t.rel_error,
                "within_ci": t.within_ci,
            }
            for t in cmp.tasks
        ],
        "stations": [
            {"station": s.station, "rho_analytic": s.rho_analytic, "rho_simulated": s.rho_simulated}
            for s in cmp.stations
        ],
    }


def _result_dict(result: CompositionResult, doc: ChainDocument) -> dict:
    step_by_id = {s.id: s for s in doc.steps}
    return {
        "assignment": {
            tid: {sid: step_by_id[sid].candidates[j].id for sid, j in sorted(row.items())}
            for tid, row in sorted(result.assignment.choices.items())
        },
        "task_times": dict(result.task_times),
        "objective_value": result.objective_value,
        "evaluated": result.evaluated,
        "stable": result.stable,
    }


def _print_stability(stab: StabilityReport, out: TextIO) -> None:
    rows = [
        (s.label, s.lambda_eff, s.mu, s.rho, s.stable)
        for s in stab.stations
    ]
    print(reporting.render_table(["station", "lambda_eff", "mu", "rho", "stable"], rows), file=out)


# ---------------------------------------------------------------------------
# handlers


def cmd_validate(args, out: TextIO, err: TextIO) -> int:
    with open(args.file, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        doc = parse_chain_document(text)
    except SemanticError as exc:
        print(f"invalid: {len(exc.diagnostics)} violation(s)", file=out)
        for diag in exc.diagnostics:
            print(f"  {diag}", file=out)
        if args.out:
            _write_json({"command": args.echo, "status": "invalid",
                         "violations": list(exc.diagnostics), "exit_code": EXIT_INVALID}, args.out)
        return EXIT_INVALID
    print(f"valid: {len(doc.steps)} step(s), {len(doc.tasks)} task(s)", file=out)
    if args.out:
        _write_json({"command": args.echo, "status": "valid", "violations": [],
                     "exit_code": EXIT_OK}, args.out)
    return EXIT_OK


def cmd_evaluate(args, out: TextIO, err: TextIO) -> int:
    doc = _read_document(args.file)
    mode = _resolve_mode(args, doc, BranchMode.ALL_ARMS)
    convention = _resolve_convention(args, doc)
    assignment = doc.resolved_assignment()

    stab = stability_check(doc.tree, doc.steps, doc.tasks, assignment)
    _print_stability(stab, out)
    payload = {
        "command": args.echo,
        "options": {"mode": mode.value, "iteration": convention.value},
        "stability": _stability_dict(stab),
    }
    if not stab.stable:
        worst = stab.first_unstable()
        print(f"error: unstable station {worst.label} (rho={reporting.fmt(worst.rho)})", file=err)
        payload.update(status="unstable", exit_code=EXIT_UNSTABLE)
        if args.out:
            _write_json(payload, args.out)
        return EXIT_UNSTABLE

    times = response_times(doc.tree, doc.steps, doc.tasks, assignment,
                           mode=mode, convention=convention, validate=False)
    print(file=out)
    print(reporting.render_table(["task", "response"], list(times.items())), file=out)
    payload.update(status="ok", exit_code=EXIT_OK, tasks=times)
    if args.out:
        _write_json(payload, args.out)
    return EXIT_OK


def cmd_simulate(args, out: TextIO, err: TextIO) -> int:
    doc = _read_document(args.file)
    assignment = doc.resolved_assignment()
    config = _sim_config(args)
    report = simulate(doc.tree, doc.steps, doc.tasks, assignment, config)

    rows = [(tid, s.mean, s.ci_halfwidth, s.count) for tid, s in report.tasks.items()]
    print(reporting.render_table(["task", "sim_mean", "ci_halfwidth", "jobs"], rows), file=out)
    print(file=out)
    station_rows = [
        (st.label, st.rho, st.utilization, st.mean_jobs, st.mean_sojourn, st.throughput)
        for st in report.stations
    ]
    print(
        reporting.render_table(
            ["station", "rho", "utilization", "mean_jobs", "sojourn", "throughput"], station_rows
        ),
        file=out,
    )

    if args.reps_csv:
        reporting.write_replication_csv(report, args.reps_csv)
    if args.plot:
        reporting.render_simulation_figure(report, args.plot)
    if args.out:
        _write_json({"command": args.echo, "status": "ok", "exit_code": EXIT_OK,
                     "simulation": _sim_dict(report)}, args.out)
    return EXIT_OK


def cmd_compare(args, out: TextIO, err: TextIO) -> int:
    doc = _read_document(args.file)
    mode = _resolve_mode(args, doc, BranchMode.EXPECTED)
    convention = _resolve_convention(args, doc)
    assignment = doc.resolved_assignment()
    config = _sim_config(args)

    report = simulate(doc.tree, doc.steps, doc.tasks, assignment, config)
    analytic = response_times(doc.tree, doc.steps, doc.tasks, assignment,
                              mode=mode, convention=convention)
    comparison = compare(analytic, report)

    rows = [
        (t.task_id, t.analytic, t.simulated, t.ci_halfwidth, t.rel_error, t.within_ci)
        for t in comparison.tasks
    ]
    print(
        reporting.render_table(
            ["task", "analytic", "simulated", "ci_halfwidth", "rel_error", "within_ci"], rows
        ),
        file=out,
    )

    if args.csv:
        reporting.write_comparison_csv(comparison, args.csv)
    if args.reps_csv:
        reporting.write_replication_csv(report, args.reps_csv)
    if args.plot:
        reporting.render_comparison_figure(comparison, args.plot)
    if args.out:
        _write_json(
            {
                "command": args.echo,
                "status": "ok",
                "exit_code": EXIT_OK,
                "options": {"mode": mode.value, "iteration": convention.value},
                "analytic": analytic,
                "simulation": _sim_dict(report),
                "comparison": _comparison_dict(comparison),
            },
            args.out,
        )
    return EXIT_OK


def cmd_optimize(args, out: TextIO, err: TextIO) -> int:
    doc = _read_document(args.file)
    mode = _resolve_mode(args, doc, BranchMode.ALL_ARMS)
    convention = _resolve_convention(args, doc)
    objective = Objective(args.objective)

    if args.selfish:
        result = selfish_baseline(doc.tree, doc.steps, doc.tasks,
                                  objective=objective, mode=mode, convention=convention, cap=args.cap)
    else:
        result = optimize_exhaustive(doc.tree, doc.steps, doc.tasks, objective,
                                     mode=mode, convention=convention, cap=args.cap)

    step_by_id = {s.id: s for s in doc.steps}
    rows = [
        (tid, sid, step_by_id[sid].candidates[j].id)
        for tid, row in sorted(result.assignment.choices.items())
        for sid, j in sorted(row.items())
    ]
    print(reporting.render_table(["task", "step", "candidate"], rows), file=out)
    print(file=out)
    time_rows = [(tid, value) for tid, value in result.task_times.items()]
    print(reporting.render_table(["task", "response"], time_rows), file=out)
    print(file=out)
    strategy = "selfish" if args.selfish else "exhaustive"
    print(f"strategy={strategy} objective={objective.value} "
          f"value={reporting.fmt(result.objective_value)} evaluated={result.evaluated}", file=out)
    if not result.stable:
        unstable = sorted(tid for tid, v in result.task_times.items() if v is None)
        print(f"warning: unstable under combined load for tasks: {', '.join(unstable)}", file=err)

    if args.out:
        _write_json(
            {
                "command": args.echo,
                "status": "ok" if result.stable else "unstable-tasks",
                "exit_code": EXIT_OK,
                "strategy": strategy,
                "objective": objective.value,
                "options": {"mode": mode.value, "iteration": convention.value},
                "result": _result_dict(result, doc),
            },
            args.out,
        )
    return EXIT_OK
