"""Rendering helpers: aligned text tables, CSV exports, and figure files."""

from __future__ import annotations

import csv
from typing import Sequence

from .simulate import ComparisonReport, SimReport


def fmt(value) -> str:
    """Numbers at 6 significant digits for human output; strings pass through."""
    if isinstance(value, bool) or value is None:
        return {True: "yes", False: "no", None: "-"}[value]
    if isinstance(value, float):
        return format(value, ".6g")
    return str(value)


def render_table(headers: Sequence[str], rows: Sequence[Sequence]) -> str:
    """Space-aligned table, first column left, the rest right."""
    cells = [[fmt(v) for v in row] for row in rows]
    widths = [len(h) for h in headers]
    for row in cells:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], len(cell))
    def line(values):
        parts = [values[0].ljust(widths[0])]
        parts += [v.rjust(w) for v, w in zip(values[1:], widths[1:])]
        return "  ".join(parts).rstrip()
    out = [line(list(headers))]
    out.extend(line(row) for row in cells)
    return "\n".join(out)


def write_comparison_csv(comparison: ComparisonReport, path: str) -> None:
    """Delimited per-task rows: analytic vs simulated with CI half-width."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["task_id", "analytic", "simulated_mean", "ci_halfwidth", "rel_error"])
        for row in comparison.tasks:
            writer.writerow([row.task_id, row.analytic, row.simulated, row.ci_halfwidth, row.rel_error])


def write_replication_csv(report: SimReport, path: str) -> None:
    """Raw per-replication task means, one row per (replication, task)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["replication", "task_id", "mean"])
        n_reps = report.config.replications
        for rep in range(n_reps):
            for task_id, stats in report.tasks.items():
                writer.writerow([rep, task_id, stats.replication_means[rep]])


def render_simulation_figure(report: SimReport, path: str) -> None:
    """Per-task means with CI bars and per-station utilization, to a file."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(11, 4.5))

    names = list(report.tasks)
    means = [report.tasks[t].mean for t in names]
    errs = [report.tasks[t].ci_halfwidth for t in names]
    ax1.bar(range(len(names)), means, yerr=errs, capsize=4, color="tab:blue")
    ax1.set_xticks(range(len(names)), names, rotation=30, ha="right")
    ax1.set_ylabel("mean response time")
    ax1.set_title("simulated response per task")

    stations = [st for st in report.stations if st.visits > 0]
    labels = [st.label for st in stations]
    x = range(len(labels))
    ax2.bar([i - 0.2 for i in x], [st.rho for st in stations], 0.4, label="analytic", color="tab:gray")
    ax2.bar([i + 0.2 for i in x], [st.utilization for st in stations], 0.4, label="simulated", color="tab:orange")
    ax2.set_xticks(list(x), labels, rotation=30, ha="right")
    ax2.set_ylabel("utilization")
    ax2.set_title("station utilization")
    ax2.legend()

    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_comparison_figure(comparison: ComparisonReport, path: str) -> None:
    """Analytic vs simulated per task (with CI bars) and per-station
    utilization, to a file."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(11, 4.5))

    names = [row.task_id for row in comparison.tasks]
    x = range(len(names))
    ax1.bar([i - 0.2 for i in x], [r.analytic for r in comparison.tasks], 0.4, label="analytic", color="tab:gray")
    ax1.bar(
        [i + 0.2 for i in x],
        [r.simulated for r in comparison.tasks],
        0.4,
        yerr=[r.ci_halfwidth for r in comparison.tasks],
        capsize=4,
        label="simulated",
        color="tab:blue",
    )
    ax1.set_xticks(list(x), names, rotation=30, ha="right")
    ax1.set_ylabel("mean response time")
    ax1.set_title("response time per task")
    ax1.legend()

    used = [st for st in comparison.stations if st.rho_simulated > 0 or st.rho_analytic > 0]
    x2 = range(len(used))
    ax2.bar([i - 0.2 for i in x2], [st.rho_analytic for st in used], 0.4, label="analytic", color="tab:gray")
    ax2.bar([i + 0.2 for i in x2], [st.rho_simulated for st in used], 0.4, label="simulated", color="tab:orange")
    ax2.set_xticks(list(x2), [st.station for st in used], rotation=30, ha="right")
    ax2.set_ylabel("utilization")
    ax2.set_title("station utilization")
    ax2.legend()

    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
