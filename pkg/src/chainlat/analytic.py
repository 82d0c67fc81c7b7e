"""Closed-form expected response times for chains of M/M/1 stations.

Covers the atomic sojourn formula 1/(mu - lambda), the structural
aggregation rules (sequence sums, parallel key path, probabilistic branch,
feedback iteration), evaluation per task under superposed Poisson streams,
and flattening a nested chain into an equivalent weighted sequence. Every
operation is a pure function; saturation always surfaces as an Unstable
error, never as a NaN, infinity, or negative time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

from .errors import Unstable
from .model import (
    AbstractStep,
    Assignment,
    Branch,
    BranchMode,
    ChainNode,
    Iteration,
    IterationConvention,
    Parallel,
    Sequence as SequenceNode,
    StationLoad,
    Step,
    Task,
    _check_tasks,
    effective_rates,
    normalized_arm_probs,
    normalized_probs,
    require_valid,
    step_table,
)

__all__ = [
    "BranchMode",
    "IterationConvention",
    "StationStability",
    "StabilityReport",
    "SerializedStep",
    "SerializedChain",
    "mm1_wait",
    "sequential_time",
    "parallel_time",
    "branch_time",
    "iteration_time",
    "stability_check",
    "task_response_time",
    "response_times",
    "serialize",
]


def _check_rate(value: float, name: str) -> None:
    if not (isinstance(value, (int, float)) and math.isfinite(value)):
        raise ValueError(f"{name} must be a finite number, got {value!r}")


def mm1_wait(mu: float, lambda_eff: float = 0.0) -> float:
    """Mean sojourn time 1/(mu - lambda_eff) of a single M/M/1 station."""
    _check_rate(mu, "mu")
    _check_rate(lambda_eff, "lambda_eff")
    if mu <= 0:
        raise ValueError(f"mu must be positive, got {mu!r}")
    if lambda_eff < 0:
        raise ValueError(f"lambda_eff must be non-negative, got {lambda_eff!r}")
    if lambda_eff >= mu:
        raise Unstable("station", lambda_eff, mu)
    return 1.0 / (mu - lambda_eff)


def sequential_time(mus: Sequence[float], lam: float) -> float:
    """Mean response time of stations visited in order by one Poisson stream.

    Burke's theorem makes every station in the tandem see Poisson arrivals
    at the full rate, so the total is the sum of the per-station sojourns.
    Raises Unstable naming the first station with mu <= lam.
    """
    _check_rate(lam, "lam")
    total = 0.0
    for i, mu in enumerate(mus):
        _check_rate(mu, f"mu[{i}]")
        if lam >= mu:
            raise Unstable(f"station {i}", lam, mu)
        total += 1.0 / (mu - lam)
    return total


def parallel_time(branches: Sequence[Sequence[float]], lam: float) -> tuple[float, int]:
    """Fork-join response time: the slowest branch's sequential time.

    Every branch executes and receives the full arrival rate, so every
    station of every branch must be stable. Returns (time, key path index);
    ties go to the lowest index.
    """
    if not branches:
        raise ValueError("parallel_time needs at least one branch")
    _check_rate(lam, "lam")
    times = []
    for m, mus in enumerate(branches):
        branch_total = 0.0
        for l, mu in enumerate(mus):
            _check_rate(mu, f"branch {m} mu[{l}]")
            if lam >= mu:
                raise Unstable(f"branch {m} station {l}", lam, mu)
            branch_total += 1.0 / (mu - lam)
        times.append(branch_total)
    best = max(times)
    return best, times.index(best)


def branch_time(
    arms: Sequence[tuple[float, Sequence[float]]],
    lam: float,
    mode: BranchMode = BranchMode.ALL_ARMS,
) -> float:
    """Response time of a probabilistic branch whose arm n thins the stream
    to prob_n * lam.

    ALL_ARMS sums every arm's time unweighted; EXPECTED weights arm times by
    their probabilities, matching the mean over randomly routed jobs.
    """
    _check_rate(lam, "lam")
    probs = normalized_probs([p for p, _ in arms])
    total = 0.0
    for n, ((_, mus), p) in enumerate(zip(arms, probs)):
        arm_rate = p * lam
        arm_total = 0.0
        for l, mu in enumerate(mus):
            _check_rate(mu, f"arm {n} mu[{l}]")
            if arm_rate >= mu:
                raise Unstable(f"arm {n} station {l}", arm_rate, mu)
            arm_total += 1.0 / (mu - arm_rate)
        total += arm_total if mode is BranchMode.ALL_ARMS else p * arm_total
    return total


def iteration_time(
    mus: Sequence[float],
    lam: float,
    p_exit: float,
    convention: IterationConvention = IterationConvention.TOTAL_SOJOURN,
) -> float:
    """Response time of a loop body under Bernoulli feedback.

    The feedback flow solves r = lam + (1 - p_exit) r, so every body station
    sees rate lam / p_exit. TOTAL_SOJOURN charges the expected 1/p_exit
    passes (first entry to final exit); PER_VISIT charges a single pass.
    """
    _check_rate(lam, "lam")
    if not (isinstance(p_exit, (int, float)) and 0.0 < p_exit <= 1.0):
        raise ValueError(f"p_exit must be in (0, 1], got {p_exit!r}")
    internal = lam / p_exit
    per_visit = 0.0
    for l, mu in enumerate(mus):
        _check_rate(mu, f"mu[{l}]")
        if internal >= mu:
            raise Unstable(f"station {l}", internal, mu)
        per_visit += 1.0 / (mu - internal)
    if convention is IterationConvention.TOTAL_SOJOURN:
        return per_visit / p_exit
    return per_visit


# ---------------------------------------------------------------------------
# multi-task evaluation


@dataclass(frozen=True)
class StationStability:
    """Load and utilization of one station under the current assignment."""

    step_id: str
    candidate_index: int
    candidate_id: str
    lambda_eff: float
    mu: float
    rho: float
    stable: bool

    @property
    def label(self) -> str:
        return f"{self.step_id}/{self.candidate_id}"


@dataclass(frozen=True)
class StabilityReport:
    """Per-station utilizations; the model is stable iff every rho < 1."""

    stations: tuple[StationStability, ...]

    @property
    def stable(self) -> bool:
        return all(s.stable for s in self.stations)

    def first_unstable(self) -> StationStability | None:
        return next((s for s in self.stations if not s.stable), None)


def stability_check(
    chain: ChainNode,
    steps: Sequence[AbstractStep],
    tasks: Sequence[Task],
    assignment: Assignment,
    *,
    validate: bool = True,
) -> StabilityReport:
    """Report rho = lambda_eff / mu per station. Instability is data here,
    not an error."""
    loads = effective_rates(chain, steps, tasks, assignment, validate=validate)
    table = step_table(steps)
    rows = []
    for (sid, j), lam in loads.items():
        cand = table[sid].candidates[j]
        rho = lam / cand.mu
        rows.append(StationStability(sid, j, cand.id, lam, cand.mu, rho, lam < cand.mu))
    return StabilityReport(tuple(rows))


def _gate(
    chain: ChainNode,
    steps: Sequence[AbstractStep],
    tasks: Sequence[Task],
    assignment: Assignment,
    validate: bool,
) -> tuple[dict[str, AbstractStep], StationLoad]:
    """Shared preamble: validate, compute loads, refuse saturated models."""
    if validate:
        require_valid(chain, steps)
        _check_tasks(tasks)
    loads = effective_rates(chain, steps, tasks, assignment, validate=False)
    table = step_table(steps)
    for (sid, j), lam in loads.items():
        cand = table[sid].candidates[j]
        if lam >= cand.mu:
            raise Unstable(f"{sid}/{cand.id}", lam, cand.mu)
    return table, loads


def _eval_node(
    node: ChainNode,
    task_id: str,
    loads: StationLoad,
    assignment: Assignment,
    table: Mapping[str, AbstractStep],
    mode: BranchMode,
    convention: IterationConvention,
) -> float:
    """Recursive structural evaluation of one task's expected response time.

    Station sojourns use the station's total effective load; weights for
    branch arms and iteration passes are applied level by level, and each
    parallel node contributes its slowest branch (the task's key path).
    """
    match node:
        case Step(step_id=sid):
            j = assignment.candidate(task_id, sid)
            return 1.0 / (table[sid].candidates[j].mu - loads[(sid, j)])
        case SequenceNode(children=children):
            return sum(
                _eval_node(c, task_id, loads, assignment, table, mode, convention)
                for c in children
            )
        case Parallel(branches=branches):
            return max(
                _eval_node(b, task_id, loads, assignment, table, mode, convention)
                for b in branches
            )
        case Branch(arms=arms):
            probs = normalized_arm_probs(arms)
            if mode is BranchMode.EXPECTED:
                return sum(
                    p * _eval_node(a.body, task_id, loads, assignment, table, mode, convention)
                    for a, p in zip(arms, probs)
                )
            return sum(
                _eval_node(a.body, task_id, loads, assignment, table, mode, convention)
                for a in arms
            )
        case Iteration(body=body, p_exit=p_exit):
            inner = _eval_node(body, task_id, loads, assignment, table, mode, convention)
            if convention is IterationConvention.TOTAL_SOJOURN:
                return inner / p_exit
            return inner
    raise TypeError(f"unknown node type {type(node).__name__}")


def task_response_time(
    chain: ChainNode,
    steps: Sequence[AbstractStep],
    tasks: Sequence[Task],
    assignment: Assignment,
    task_id: str,
    *,
    mode: BranchMode = BranchMode.ALL_ARMS,
    convention: IterationConvention = IterationConvention.TOTAL_SOJOURN,
    validate: bool = True,
) -> float:
    """Expected end-to-end response time of one task under the full
    concurrent load.

    Only stations the task actually uses contribute to the sum, but their
    denominators carry the superposed load of every task sharing them.
    Raises Unstable (with the offending station and its rho) when any
    station in the model is saturated.
    """
    table, loads = _gate(chain, steps, tasks, assignment, validate)
    if task_id not in {t.id for t in tasks}:
        raise ValueError(f"unknown task {task_id!r}")
    return _eval_node(chain, task_id, loads, assignment, table, mode, convention)


def response_times(
    chain: ChainNode,
    steps: Sequence[AbstractStep],
    tasks: Sequence[Task],
    assignment: Assignment,
    *,
    mode: BranchMode = BranchMode.ALL_ARMS,
    convention: IterationConvention = IterationConvention.TOTAL_SOJOURN,
    validate: bool = True,
) -> dict[str, float]:
    """Expected response time for every task, in task order."""
    table, loads = _gate(chain, steps, tasks, assignment, validate)
    return {
        t.id: _eval_node(chain, t.id, loads, assignment, table, mode, convention)
        for t in tasks
    }


# ---------------------------------------------------------------------------
# serialization to an equivalent weighted sequence


@dataclass(frozen=True)
class SerializedStep:
    """One station visit of the flattened chain.

    ``kappa`` rescales the incoming rate, ``visit_weight`` the per-visit
    sojourn; per-task maps resolve the candidate each task selected and the
    effective load it sees there. ``tasks_on_path`` lists the tasks whose
    parallel key paths include this step.
    """

    step_id: str
    kappa: float
    visit_weight: float
    candidate_by_task: Mapping[str, int]
    mu_by_task: Mapping[str, float]
    load_by_task: Mapping[str, float]
    tasks_on_path: frozenset[str]


@dataclass(frozen=True)
class SerializedChain:
    """An ordered, weighted sequence equivalent to the original tree.

    ``key_paths`` records, per parallel node path and per task, which branch
    was kept. Evaluating ``response_time`` reproduces the recursive
    structural evaluation.
    """

    steps: tuple[SerializedStep, ...]
    key_paths: Mapping[str, Mapping[str, int]]
    task_ids: frozenset[str]

    def response_time(self, task_id: str) -> float:
        if task_id not in self.task_ids:
            raise ValueError(f"unknown task {task_id!r}")
        return sum(
            s.visit_weight / (s.mu_by_task[task_id] - s.load_by_task[task_id])
            for s in self.steps
            if task_id in s.tasks_on_path
        )


def serialize(
    chain: ChainNode,
    steps: Sequence[AbstractStep],
    tasks: Sequence[Task],
    assignment: Assignment,
    *,
    mode: BranchMode = BranchMode.ALL_ARMS,
    convention: IterationConvention = IterationConvention.TOTAL_SOJOURN,
    validate: bool = True,
) -> SerializedChain:
    """Flatten the tree into an equivalent sequence of weighted stations.

    Sequence, branch, and iteration regions keep all their steps with the
    ancestry-accumulated (kappa, visit_weight). Parallel regions keep only
    the key path, chosen per task under the current effective rates (the key
    path is load dependent); ties break toward the lowest branch index.
    Raises Unstable when any station is saturated, since the key path is
    undefined then.
    """
    table, loads = _gate(chain, steps, tasks, assignment, validate)
    task_order = [t.id for t in tasks]
    out_steps: list[SerializedStep] = []
    key_paths: dict[str, dict[str, int]] = {}

    def emit(node: ChainNode, kappa: float, weight: float, on_path: frozenset[str], path: str) -> None:
        match node:
            case Step(step_id=sid):
                cands = {t: assignment.candidate(t, sid) for t in task_order}
                out_steps.append(
                    SerializedStep(
                        step_id=sid,
                        kappa=kappa,
                        visit_weight=weight,
                        candidate_by_task=cands,
                        mu_by_task={t: table[sid].candidates[j].mu for t, j in cands.items()},
                        load_by_task={t: loads[(sid, j)] for t, j in cands.items()},
                        tasks_on_path=on_path,
                    )
                )
            case SequenceNode(children=children):
                for i, child in enumerate(children):
                    emit(child, kappa, weight, on_path, f"{path}.children[{i}]")
            case Parallel(branches=branches):
                choice: dict[str, int] = {}
                for tid in task_order:
                    if tid not in on_path:
                        continue
                    values = [
                        _eval_node(b, tid, loads, assignment, table, mode, convention)
                        for b in branches
                    ]
                    choice[tid] = values.index(max(values))
                key_paths[path] = choice
                for i, branch in enumerate(branches):
                    kept = frozenset(t for t, c in choice.items() if c == i)
                    if kept:
                        emit(branch, kappa, weight, kept, f"{path}.branches[{i}]")
            case Branch(arms=arms):
                probs = normalized_arm_probs(arms)
                for i, (arm, p) in enumerate(zip(arms, probs)):
                    arm_weight = 1.0 if mode is BranchMode.ALL_ARMS else p
                    emit(arm.body, kappa * p, weight * arm_weight, on_path, f"{path}.arms[{i}].body")
            case Iteration(body=body, p_exit=p_exit):
                passes = 1.0 / p_exit
                visit = passes if convention is IterationConvention.TOTAL_SOJOURN else 1.0
                emit(body, kappa * passes, weight * visit, on_path, f"{path}.body")

    emit(chain, 1.0, 1.0, frozenset(task_order), "tree")
    return SerializedChain(tuple(out_steps), key_paths, frozenset(task_order))
