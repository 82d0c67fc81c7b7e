"""Workflow chain model: stations, task streams, control-flow tree, loads.

A chain is a tree of control-flow nodes over abstract steps. Each abstract
step owns an ordered list of candidate services; a candidate is a single
FIFO station with exponential service rate ``mu``. Concurrent task streams
(Poisson arrivals with rate ``arrival_rate``) are bound to one candidate
per step by an assignment matrix. This module defines those types,
validates trees, and derives per-station effective arrival rates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, NamedTuple, Sequence, Union

from .errors import IncompleteAssignment, InvalidChain, InvalidProbabilities

#: Absolute tolerance for branch probabilities summing to one.
PROB_TOL = 1e-9


class BranchMode(Enum):
    """How probabilistic branch arms weigh into an aggregate response time.

    ALL_ARMS sums every arm's time at full weight; EXPECTED weights each
    arm by its selection probability, which matches the stochastic mean.
    """

    ALL_ARMS = "paper"
    EXPECTED = "expected"


class IterationConvention(Enum):
    """What an iteration structure's response time measures.

    TOTAL_SOJOURN covers all feedback passes, first entry to final exit.
    PER_VISIT covers a single pass through the loop body.
    """

    TOTAL_SOJOURN = "total"
    PER_VISIT = "per-visit"


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class CandidateService:
    """A concrete service: one M/M/1 station with service rate ``mu``."""

    id: str
    mu: float

    def __post_init__(self):
        if not (isinstance(self.mu, (int, float)) and math.isfinite(self.mu) and self.mu > 0):
            raise ValueError(f"candidate {self.id!r}: service rate must be a positive finite number, got {self.mu!r}")


@dataclass(frozen=True)
class AbstractStep:
    """An abstract processing step with an ordered, non-empty candidate list."""

    id: str
    candidates: tuple[CandidateService, ...]

    def __post_init__(self):
        object.__setattr__(self, "candidates", tuple(self.candidates))
        if not self.candidates:
            raise ValueError(f"step {self.id!r} needs at least one candidate")
        ids = [c.id for c in self.candidates]
        if len(set(ids)) != len(ids):
            raise ValueError(f"step {self.id!r} has duplicate candidate ids")


@dataclass(frozen=True)
class Task:
    """A concurrent request stream with Poisson arrival rate ``arrival_rate``."""

    id: str
    arrival_rate: float

    def __post_init__(self):
        rate = self.arrival_rate
        if not (isinstance(rate, (int, float)) and math.isfinite(rate) and rate > 0):
            raise ValueError(f"task {self.id!r}: arrival rate must be a positive finite number, got {rate!r}")


@dataclass(frozen=True)
class Step:
    """Leaf node: run the abstract step ``step_id``."""

    step_id: str


@dataclass(frozen=True)
class Sequence:
    """Children executed one after another."""

    children: tuple["ChainNode", ...]

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))


@dataclass(frozen=True)
class Parallel:
    """Fork-join: every branch executes, the node completes when all do."""

    branches: tuple["ChainNode", ...]

    def __post_init__(self):
        object.__setattr__(self, "branches", tuple(self.branches))


@dataclass(frozen=True)
class BranchArm:
    """One probabilistic alternative of a Branch node."""

    prob: float
    body: "ChainNode"


@dataclass(frozen=True)
class Branch:
    """Exactly one arm executes, arm ``n`` with probability ``arms[n].prob``."""

    arms: tuple[BranchArm, ...]

    def __post_init__(self):
        object.__setattr__(self, "arms", tuple(self.arms))


@dataclass(frozen=True)
class Iteration:
    """Loop body with Bernoulli feedback: after each pass the body repeats
    with probability ``1 - p_exit``."""

    body: "ChainNode"
    p_exit: float


ChainNode = Union[Step, Sequence, Parallel, Branch, Iteration]

#: A station is one candidate of one step.
StationKey = tuple[str, int]

#: Effective arrival rate per station.
StationLoad = dict[StationKey, float]


@dataclass(frozen=True)
class Assignment:
    """Selection matrix mapping every (task, step) pair to a candidate index."""

    choices: Mapping[str, Mapping[str, int]]

    def __post_init__(self):
        object.__setattr__(
            self, "choices", {task: dict(row) for task, row in self.choices.items()}
        )

    def candidate(self, task_id: str, step_id: str) -> int:
        return self.choices[task_id][step_id]


@dataclass(frozen=True)
class Violation:
    """One invariant violation, located by a path into the tree."""

    path: str
    message: str

    def __str__(self):
        return f"{self.path}: {self.message}"


class StructureFactor(NamedTuple):
    """Per-step serialization multipliers.

    ``kappa`` scales the incoming arrival rate (branch thinning, feedback
    amplification); ``visit_weight`` scales the per-visit sojourn into the
    structure's contribution to total response time.
    """

    kappa: float
    visit_weight: float


# ---------------------------------------------------------------------------
# operations


def step_table(steps: Iterable[AbstractStep]) -> dict[str, AbstractStep]:
    """Index steps by id, rejecting duplicates."""
    table: dict[str, AbstractStep] = {}
    for step in steps:
        if step.id in table:
            raise ValueError(f"duplicate step id {step.id!r}")
        table[step.id] = step
    return table


def validate_chain(
    chain: ChainNode, steps: Sequence[AbstractStep] | None = None
) -> list[Violation]:
    """Collect every invariant violation in a chain tree.

    Violations are data, not failures: a valid chain yields an empty list.
    When ``steps`` is given, step references are checked against it;
    otherwise only tree-local invariants are checked.
    """
    violations: list[Violation] = []
    table: dict[str, AbstractStep] | None = None
    if steps is not None:
        table = {}
        for step in steps:
            if step.id in table:
                violations.append(Violation("steps", f"duplicate step id {step.id!r}"))
            table[step.id] = step

    seen: dict[str, str] = {}

    def walk(node: ChainNode, path: str) -> None:
        match node:
            case Step(step_id=sid):
                if table is not None and sid not in table:
                    violations.append(Violation(path, f"unknown step {sid!r}"))
                if sid in seen:
                    violations.append(
                        Violation(path, f"step {sid!r} already used at {seen[sid]}; steps must be unique in the tree")
                    )
                else:
                    seen[sid] = path
            case Sequence(children=children):
                if not children:
                    violations.append(Violation(path, "empty sequence"))
                for i, child in enumerate(children):
                    walk(child, f"{path}.children[{i}]")
            case Parallel(branches=branches):
                if len(branches) < 2:
                    violations.append(
                        Violation(path, f"parallel needs at least 2 branches, got {len(branches)}")
                    )
                for i, branch in enumerate(branches):
                    walk(branch, f"{path}.branches[{i}]")
            case Branch(arms=arms):
                if len(arms) < 2:
                    violations.append(Violation(path, f"branch needs at least 2 arms, got {len(arms)}"))
                total = 0.0
                for i, arm in enumerate(arms):
                    if not (isinstance(arm.prob, (int, float)) and 0.0 < arm.prob <= 1.0):
                        violations.append(
                            Violation(f"{path}.arms[{i}]", f"arm probability {arm.prob!r} out of (0, 1]")
                        )
                    else:
                        total += arm.prob
                if arms and abs(total - 1.0) > PROB_TOL:
                    violations.append(Violation(path, f"arm probabilities sum {total:.10g} != 1"))
                for i, arm in enumerate(arms):
                    walk(arm.body, f"{path}.arms[{i}].body")
            case Iteration(body=body, p_exit=p_exit):
                if not (isinstance(p_exit, (int, float)) and 0.0 < p_exit <= 1.0):
                    violations.append(Violation(path, f"p_exit {p_exit!r} out of (0, 1]"))
                walk(body, f"{path}.body")
            case _:
                violations.append(Violation(path, f"unknown node type {type(node).__name__}"))

    walk(chain, "tree")
    return violations


def require_valid(chain: ChainNode, steps: Sequence[AbstractStep] | None = None) -> None:
    """Raise InvalidChain when validation produces violations."""
    violations = validate_chain(chain, steps)
    if violations:
        raise InvalidChain(violations)


def normalized_probs(probs: Sequence[float]) -> list[float]:
    """Probabilities rescaled to sum to exactly one.

    Inputs are only normalized when already within PROB_TOL of one;
    anything further off is rejected.
    """
    for p in probs:
        if not (isinstance(p, (int, float)) and 0.0 < p <= 1.0):
            raise InvalidProbabilities(f"arm probability {p!r} out of (0, 1]")
    total = sum(probs)
    if abs(total - 1.0) > PROB_TOL:
        raise InvalidProbabilities(f"arm probabilities sum to {total:.10g}, expected 1")
    return [p / total for p in probs]


def normalized_arm_probs(arms: Sequence[BranchArm]) -> list[float]:
    """Branch arm probabilities rescaled to sum to exactly one."""
    return normalized_probs([arm.prob for arm in arms])


def _factor_walk(
    chain: ChainNode, mode: BranchMode, convention: IterationConvention
) -> dict[str, StructureFactor]:
    """Multiplicative (kappa, visit_weight) accumulation along the ancestry path."""
    out: dict[str, StructureFactor] = {}

    def walk(node: ChainNode, kappa: float, weight: float) -> None:
        match node:
            case Step(step_id=sid):
                out[sid] = StructureFactor(kappa, weight)
            case Sequence(children=children):
                for child in children:
                    walk(child, kappa, weight)
            case Parallel(branches=branches):
                for branch in branches:
                    walk(branch, kappa, weight)
            case Branch(arms=arms):
                probs = normalized_arm_probs(arms)
                for arm, p in zip(arms, probs):
                    arm_weight = 1.0 if mode is BranchMode.ALL_ARMS else p
                    walk(arm.body, kappa * p, weight * arm_weight)
            case Iteration(body=body, p_exit=p_exit):
                passes = 1.0 / p_exit
                visit = passes if convention is IterationConvention.TOTAL_SOJOURN else 1.0
                walk(body, kappa * passes, weight * visit)

    walk(chain, 1.0, 1.0)
    return out


def structure_factors(
    chain: ChainNode,
    *,
    mode: BranchMode = BranchMode.ALL_ARMS,
    convention: IterationConvention = IterationConvention.TOTAL_SOJOURN,
) -> dict[str, StructureFactor]:
    """Per-step serialization factors, in tree order.

    ``kappa`` is the product along the step's ancestry of 1 for sequence and
    parallel levels, the arm probability for branch levels, and the expected
    pass count (1 / p_exit) for iteration levels. ``visit_weight`` follows the
    same recursion but its branch factor depends on ``mode`` and its iteration
    factor on ``convention``. A root-level step has kappa = visit_weight = 1.
    Purely structural: service and arrival rates never enter.
    """
    require_valid(chain)
    return _factor_walk(chain, mode, convention)


def tree_step_ids(chain: ChainNode) -> list[str]:
    """Step ids referenced by the tree, in depth-first order."""
    return list(_factor_walk(chain, BranchMode.ALL_ARMS, IterationConvention.TOTAL_SOJOURN))


def _check_tasks(tasks: Sequence[Task]) -> None:
    ids = [t.id for t in tasks]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate task ids")


def _check_assignment_complete(
    table: Mapping[str, AbstractStep],
    step_ids: Iterable[str],
    tasks: Sequence[Task],
    assignment: Assignment,
) -> None:
    missing: list[tuple[str, str]] = []
    for task in tasks:
        row = assignment.choices.get(task.id)
        for sid in step_ids:
            index = None if row is None else row.get(sid)
            if index is None or not (0 <= index < len(table[sid].candidates)):
                missing.append((task.id, sid))
    if missing:
        raise IncompleteAssignment(missing)


def effective_rates(
    chain: ChainNode,
    steps: Sequence[AbstractStep],
    tasks: Sequence[Task],
    assignment: Assignment,
    *,
    validate: bool = True,
) -> StationLoad:
    """Effective arrival rate per station under all concurrent tasks.

    For step ``l`` and candidate ``j`` the load is kappa(l) times the sum of
    arrival rates of the tasks assigned to that candidate. Candidates no task
    chose carry a load of zero. Linear in each task's arrival rate.
    """
    if validate:
        require_valid(chain, steps)
        _check_tasks(tasks)
    table = step_table(steps)
    factors = _factor_walk(chain, BranchMode.ALL_ARMS, IterationConvention.TOTAL_SOJOURN)
    _check_assignment_complete(table, factors, tasks, assignment)

    loads: StationLoad = {}
    for sid, factor in factors.items():
        for j in range(len(table[sid].candidates)):
            lam = 0.0
            for task in tasks:
                if assignment.candidate(task.id, sid) == j:
                    lam += task.arrival_rate
            loads[(sid, j)] = factor.kappa * lam
    return loads
