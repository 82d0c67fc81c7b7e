"""Assignment search over candidate services under concurrent task streams.

Two strategies: an exhaustive optimum over every complete assignment, and a
"selfish" baseline where each task plans as if it were alone. The baseline
reproduces the congestion phenomenon that motivates joint planning: tasks
pile onto the same fastest candidates and every one of them ends up slower,
sometimes past the point of saturation.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterator, Mapping, Sequence

from .errors import NoStableAssignment, SearchSpaceTooLarge, Unstable
from .model import (
    AbstractStep,
    Assignment,
    BranchMode,
    ChainNode,
    IterationConvention,
    Task,
    effective_rates,
    require_valid,
    step_table,
    tree_step_ids,
)
from .analytic import _eval_node, response_times


class Objective(Enum):
    """Scalarization of per-task response times for the search."""

    MIN_MAX = "minmax"
    MIN_MEAN = "mean"


@dataclass(frozen=True)
class CompositionResult:
    """Outcome of an assignment search.

    ``task_times`` holds each task's analytic response under the returned
    assignment and the full combined load; None marks a task whose own
    stations are saturated there. ``objective_value`` is None when any
    task time is undefined. ``evaluated`` counts enumerated assignments
    (exhaustive search) or single-task evaluations (selfish baseline).
    """

    assignment: Assignment
    task_times: Mapping[str, float | None]
    objective_value: float | None
    evaluated: int

    @property
    def stable(self) -> bool:
        return all(v is not None for v in self.task_times.values())


def search_space_size(steps: Sequence[AbstractStep], tasks: Sequence[Task]) -> int:
    """Number of complete assignments: product of candidate counts, once per task."""
    per_task = math.prod(len(s.candidates) for s in steps)
    return per_task ** len(tasks)


def enumerate_assignments(
    steps: Sequence[AbstractStep],
    tasks: Sequence[Task],
    *,
    cap: int = 1_000_000,
) -> Iterator[Assignment]:
    """Yield every complete assignment exactly once, in lexicographic order
    of the (task-major, step-minor) candidate-index encoding."""
    count = search_space_size(steps, tasks)
    if count > cap:
        raise SearchSpaceTooLarge(count, cap)
    ranges = [range(len(s.candidates)) for _ in tasks for s in steps]
    n_steps = len(steps)
    for combo in itertools.product(*ranges):
        choices = {}
        for i, task in enumerate(tasks):
            row = combo[i * n_steps : (i + 1) * n_steps]
            choices[task.id] = {s.id: j for s, j in zip(steps, row)}
        yield Assignment(choices)


def _objective_value(objective: Objective, tasks: Sequence[Task], times: Mapping[str, float]) -> float:
    if objective is Objective.MIN_MAX:
        return max(times[t.id] for t in tasks)
    total_rate = sum(t.arrival_rate for t in tasks)
    return sum(t.arrival_rate * times[t.id] for t in tasks) / total_rate


def optimize_exhaustive(
    chain: ChainNode,
    steps: Sequence[AbstractStep],
    tasks: Sequence[Task],
    objective: Objective = Objective.MIN_MAX,
    *,
    mode: BranchMode = BranchMode.ALL_ARMS,
    convention: IterationConvention = IterationConvention.TOTAL_SOJOURN,
    cap: int = 1_000_000,
) -> CompositionResult:
    """Best stable assignment under the objective, by full enumeration.

    Unstable assignments are skipped. Ties resolve to the lexicographically
    smallest assignment encoding, which the enumeration order guarantees.
    """
    require_valid(chain, steps)
    best: tuple[float, Assignment, dict[str, float]] | None = None
    evaluated = 0
    for assignment in enumerate_assignments(steps, tasks, cap=cap):
        evaluated += 1
        try:
            times = response_times(
                chain, steps, tasks, assignment,
                mode=mode, convention=convention, validate=False,
            )
        except Unstable:
            continue
        value = _objective_value(objective, tasks, times)
        if best is None or value < best[0]:
            best = (value, assignment, times)
    if best is None:
        raise NoStableAssignment(f"none of the {evaluated} assignments is stable")
    value, assignment, times = best
    return CompositionResult(assignment, times, value, evaluated)


def _task_time_under_load(
    chain: ChainNode,
    steps: Sequence[AbstractStep],
    tasks: Sequence[Task],
    assignment: Assignment,
    task_id: str,
    mode: BranchMode,
    convention: IterationConvention,
) -> float | None:
    """One task's time under the combined load, or None when a station on
    its own path is saturated (other tasks' stations do not gate it)."""
    loads = effective_rates(chain, steps, tasks, assignment, validate=False)
    table = step_table(steps)
    for sid in tree_step_ids(chain):
        j = assignment.candidate(task_id, sid)
        if loads[(sid, j)] >= table[sid].candidates[j].mu:
            return None
    return _eval_node(chain, task_id, loads, assignment, table, mode, convention)


def selfish_baseline(
    chain: ChainNode,
    steps: Sequence[AbstractStep],
    tasks: Sequence[Task],
    *,
    objective: Objective = Objective.MIN_MAX,
    mode: BranchMode = BranchMode.ALL_ARMS,
    convention: IterationConvention = IterationConvention.TOTAL_SOJOURN,
    cap: int = 1_000_000,
) -> CompositionResult:
    """Each task plans alone, then all plans run together.

    Every task picks the assignment minimizing its own response time with
    the other streams absent (ties toward the lowest candidate index). The
    combined plan is then re-evaluated under the true superposed load;
    saturation is reported per task instead of raised, since that collapse
    is exactly what the baseline is meant to expose.
    """
    require_valid(chain, steps)
    rows: dict[str, Mapping[str, int]] = {}
    evaluated = 0
    for task in tasks:
        solo = optimize_exhaustive(
            chain, steps, [task], objective,
            mode=mode, convention=convention, cap=cap,
        )
        evaluated += solo.evaluated
        rows[task.id] = solo.assignment.choices[task.id]
    combined = Assignment(rows)

    times = {
        t.id: _task_time_under_load(chain, steps, tasks, combined, t.id, mode, convention)
        for t in tasks
    }
    value = None
    if all(v is not None for v in times.values()):
        value = _objective_value(objective, tasks, times)
    return CompositionResult(combined, times, value, evaluated)
