"""Chain documents: the JSON file format the CLI consumes.

One document is one reproducible experiment: the step table, the
control-flow tree, the task streams, an optional assignment, and optional
evaluation options. The schema is strict; unknown keys and unknown node
kinds are rejected with a path to the offending element.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any, Mapping

from .errors import ParseError, SemanticError
from .model import (
    AbstractStep,
    Assignment,
    Branch,
    BranchArm,
    BranchMode,
    CandidateService,
    ChainNode,
    Iteration,
    IterationConvention,
    Parallel,
    Sequence,
    Step,
    Task,
    validate_chain,
)

_NODE_KEYS = {
    "step": {"kind", "step"},
    "seq": {"kind", "children"},
    "par": {"kind", "branches"},
    "branch": {"kind", "arms"},
    "iter": {"kind", "p_exit", "body"},
}

_BRANCH_MODES = {m.value: m for m in BranchMode}
_ITERATION_CONVENTIONS = {c.value: c for c in IterationConvention}


@dataclass(frozen=True)
class DocumentOptions:
    """Evaluation defaults carried by the document; flags override them."""

    branch_mode: BranchMode | None = None
    iteration: IterationConvention | None = None


@dataclass(frozen=True)
class ChainDocument:
    steps: tuple[AbstractStep, ...]
    tree: ChainNode
    tasks: tuple[Task, ...]
    assignment: Assignment | None
    options: DocumentOptions

    def resolved_assignment(self) -> Assignment:
        """The document's assignment, or the first-candidate default when
        the document carries none."""
        if self.assignment is not None:
            return self.assignment
        return Assignment({t.id: {s.id: 0 for s in self.steps} for t in self.tasks})


def _require_object(value: Any, path: str) -> dict:
    if not isinstance(value, dict):
        raise ParseError(f"{path}: expected an object, got {type(value).__name__}")
    return value


def _require_array(value: Any, path: str) -> list:
    if not isinstance(value, list):
        raise ParseError(f"{path}: expected an array, got {type(value).__name__}")
    return value


def _require_string(value: Any, path: str) -> str:
    if not isinstance(value, str) or not value:
        raise ParseError(f"{path}: expected a non-empty string, got {value!r}")
    return value


def _require_number(value: Any, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ParseError(f"{path}: expected a number, got {value!r}")
    return float(value)


def _reject_unknown_keys(obj: Mapping[str, Any], allowed: set[str], path: str) -> None:
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise ParseError(f"{path}: unknown keys {unknown}")


def _parse_node(obj: Any, path: str) -> ChainNode:
    node = _require_object(obj, path)
    kind = node.get("kind")
    if kind not in _NODE_KEYS:
        raise ParseError(f"{path}: unknown node kind {kind!r}")
    _reject_unknown_keys(node, _NODE_KEYS[kind], path)
    if kind == "step":
        return Step(_require_string(node.get("step"), f"{path}.step"))
    if kind == "seq":
        children = _require_array(node.get("children"), f"{path}.children")
        return Sequence(tuple(_parse_node(c, f"{path}.children[{i}]") for i, c in enumerate(children)))
    if kind == "par":
        branches = _require_array(node.get("branches"), f"{path}.branches")
        return Parallel(tuple(_parse_node(b, f"{path}.branches[{i}]") for i, b in enumerate(branches)))
    if kind == "branch":
        arms = _require_array(node.get("arms"), f"{path}.arms")
        parsed = []
        for i, arm in enumerate(arms):
            arm_obj = _require_object(arm, f"{path}.arms[{i}]")
            _reject_unknown_keys(arm_obj, {"prob", "body"}, f"{path}.arms[{i}]")
            prob = _require_number(arm_obj.get("prob"), f"{path}.arms[{i}].prob")
            body = _parse_node(arm_obj.get("body"), f"{path}.arms[{i}].body")
            parsed.append(BranchArm(prob, body))
        return Branch(tuple(parsed))
    p_exit = _require_number(node.get("p_exit"), f"{path}.p_exit")
    body = _parse_node(node.get("body"), f"{path}.body")
    return Iteration(body, p_exit)


def _parse_steps(raw: Any) -> tuple[AbstractStep, ...]:
    steps = []
    seen: set[str] = set()
    for i, item in enumerate(_require_array(raw, "steps")):
        obj = _require_object(item, f"steps[{i}]")
        _reject_unknown_keys(obj, {"id", "candidates"}, f"steps[{i}]")
        sid = _require_string(obj.get("id"), f"steps[{i}].id")
        if sid in seen:
            raise SemanticError([f"steps[{i}]: duplicate step id {sid!r}"])
        seen.add(sid)
        candidates = []
        for j, cand in enumerate(_require_array(obj.get("candidates"), f"steps[{i}].candidates")):
            cand_obj = _require_object(cand, f"steps[{i}].candidates[{j}]")
            _reject_unknown_keys(cand_obj, {"id", "mu"}, f"steps[{i}].candidates[{j}]")
            cid = _require_string(cand_obj.get("id"), f"steps[{i}].candidates[{j}].id")
            mu = _require_number(cand_obj.get("mu"), f"steps[{i}].candidates[{j}].mu")
            try:
                candidates.append(CandidateService(cid, mu))
            except ValueError as exc:
                raise SemanticError([f"steps[{i}].candidates[{j}]: {exc}"]) from exc
        try:
            steps.append(AbstractStep(sid, tuple(candidates)))
        except ValueError as exc:
            raise SemanticError([f"steps[{i}]: {exc}"]) from exc
    if not steps:
        raise SemanticError(["steps: at least one step is required"])
    return tuple(steps)


def _parse_tasks(raw: Any) -> tuple[Task, ...]:
    tasks = []
    seen: set[str] = set()
    for i, item in enumerate(_require_array(raw, "tasks")):
        obj = _require_object(item, f"tasks[{i}]")
        _reject_unknown_keys(obj, {"id", "lambda"}, f"tasks[{i}]")
        tid = _require_string(obj.get("id"), f"tasks[{i}].id")
        if tid in seen:
            raise SemanticError([f"tasks[{i}]: duplicate task id {tid!r}"])
        seen.add(tid)
        rate = _require_number(obj.get("lambda"), f"tasks[{i}].lambda")
        try:
            tasks.append(Task(tid, rate))
        except ValueError as exc:
            raise SemanticError([f"tasks[{i}]: {exc}"]) from exc
    if not tasks:
        raise SemanticError(["tasks: at least one task is required"])
    return tuple(tasks)


def _parse_assignment(
    raw: Any,
    steps: tuple[AbstractStep, ...],
    tasks: tuple[Task, ...],
) -> Assignment:
    obj = _require_object(raw, "assignment")
    step_by_id = {s.id: s for s in steps}
    task_ids = {t.id for t in tasks}
    problems: list[str] = []
    choices: dict[str, dict[str, int]] = {}
    for tid, row in obj.items():
        if tid not in task_ids:
            problems.append(f"assignment.{tid}: unknown task")
            continue
        row_obj = _require_object(row, f"assignment.{tid}")
        converted: dict[str, int] = {}
        for sid, cid in row_obj.items():
            step = step_by_id.get(sid)
            if step is None:
                problems.append(f"assignment.{tid}.{sid}: unknown step")
                continue
            cand_ids = [c.id for c in step.candidates]
            if cid not in cand_ids:
                problems.append(f"assignment.{tid}.{sid}: unknown candidate {cid!r}")
                continue
            converted[sid] = cand_ids.index(cid)
        choices[tid] = converted
    for tid in sorted(task_ids):
        row = choices.get(tid, {})
        for sid in step_by_id:
            if sid not in row:
                problems.append(f"assignment.{tid}.{sid}: missing entry")
    if problems:
        raise SemanticError(problems)
    return Assignment(choices)


def _parse_options(raw: Any) -> DocumentOptions:
    obj = _require_object(raw, "options")
    _reject_unknown_keys(obj, {"branch_mode", "iteration"}, "options")
    branch_mode = None
    iteration = None
    if "branch_mode" in obj:
        value = obj["branch_mode"]
        if value not in _BRANCH_MODES:
            raise ParseError(f"options.branch_mode: expected one of {sorted(_BRANCH_MODES)}, got {value!r}")
        branch_mode = _BRANCH_MODES[value]
    if "iteration" in obj:
        value = obj["iteration"]
        if value not in _ITERATION_CONVENTIONS:
            raise ParseError(
                f"options.iteration: expected one of {sorted(_ITERATION_CONVENTIONS)}, got {value!r}"
            )
        iteration = _ITERATION_CONVENTIONS[value]
    return DocumentOptions(branch_mode, iteration)


def parse_chain_document(text: str) -> ChainDocument:
    """Parse and fully validate a chain document.

    Raises ParseError for malformed JSON or schema violations (with line and
    column where the JSON decoder provides them) and SemanticError for
    documents that parse but break model invariants, naming each offending
    node path.
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON: {exc.msg}", exc.lineno, exc.colno) from exc

    top = _require_object(raw, "document")
    _reject_unknown_keys(top, {"steps", "tree", "tasks", "assignment", "options"}, "document")
    for key in ("steps", "tree", "tasks"):
        if key not in top:
            raise ParseError(f"document: missing required key {key!r}")

    steps = _parse_steps(top["steps"])
    tree = _parse_node(top["tree"], "tree")
    tasks = _parse_tasks(top["tasks"])

    violations = validate_chain(tree, steps)
    if violations:
        raise SemanticError([str(v) for v in violations])

    assignment = None
    if "assignment" in top:
        assignment = _parse_assignment(top["assignment"], steps, tasks)
    options = _parse_options(top["options"]) if "options" in top else DocumentOptions()
    return ChainDocument(steps, tree, tasks, assignment, options)


def _node_to_dict(node: ChainNode) -> dict:
    match node:
        case Step(step_id=sid):
            return {"kind": "step", "step": sid}
        case Sequence(children=children):
            return {"kind": "seq", "children": [_node_to_dict(c) for c in children]}
        case Parallel(branches=branches):
            return {"kind": "par", "branches": [_node_to_dict(b) for b in branches]}
        case Branch(arms=arms):
            return {
                "kind": "branch",
                "arms": [{"prob": a.prob, "body": _node_to_dict(a.body)} for a in arms],
            }
        case Iteration(body=body, p_exit=p_exit):
            return {"kind": "iter", "p_exit": p_exit, "body": _node_to_dict(body)}
    raise TypeError(f"unknown node type {type(node).__name__}")


def document_to_dict(doc: ChainDocument) -> dict:
    """Canonical JSON-ready form; parsing it back yields an equal document."""
    out: dict[str, Any] = {
        "steps": [
            {"id": s.id, "candidates": [{"id": c.id, "mu": c.mu} for c in s.candidates]}
            for s in doc.steps
        ],
        "tree": _node_to_dict(doc.tree),
        "tasks": [{"id": t.id, "lambda": t.arrival_rate} for t in doc.tasks],
    }
    if doc.assignment is not None:
        step_by_id = {s.id: s for s in doc.steps}
        out["assignment"] = {
            tid: {sid: step_by_id[sid].candidates[j].id for sid, j in sorted(row.items())}
            for tid, row in sorted(doc.assignment.choices.items())
        }
    opts: dict[str, str] = {}
    if doc.options.branch_mode is not None:
        opts["branch_mode"] = doc.options.branch_mode.value
    if doc.options.iteration is not None:
        opts["iteration"] = doc.options.iteration.value
    if opts:
        out["options"] = opts
    return out


def document_to_json(doc: ChainDocument) -> str:
    return json.dumps(document_to_dict(doc), indent=2) + "\n"
