from __future__ import annotations

import pytest

from chainlat import (
    AbstractStep,
    Assignment,
    Branch,
    BranchArm,
    CandidateService,
    IncompleteAssignment,
    InvalidChain,
    Iteration,
    Parallel,
    Sequence,
    Step,
    Task,
    effective_rates,
    step_table,
    structure_factors,
    validate_chain,
)
from genchains import random_instance


def svc(mu, cid="c"):
    return CandidateService(cid, mu)


def single(sid, mu):
    return AbstractStep(sid, (svc(mu),))


class TestTypeInvariants:
    def test_candidate_rejects_nonpositive_mu(self):
        with pytest.raises(ValueError):
            CandidateService("c", 0.0)
        with pytest.raises(ValueError):
            CandidateService("c", -1.0)
        with pytest.raises(ValueError):
            CandidateService("c", float("nan"))

    def test_step_rejects_empty_candidates(self):
        with pytest.raises(ValueError):
            AbstractStep("s", ())

    def test_step_rejects_duplicate_candidate_ids(self):
        with pytest.raises(ValueError):
            AbstractStep("s", (svc(1.0, "a"), svc(2.0, "a")))

    def test_task_rejects_nonpositive_rate(self):
        with pytest.raises(ValueError):
            Task("t", 0.0)

    def test_step_table_rejects_duplicates(self):
        with pytest.raises(ValueError):
            step_table([single("s", 1.0), single("s", 2.0)])


class TestValidation:
    def test_branch_probabilities_must_sum_to_one(self):
        chain = Branch((BranchArm(0.5, Step("a")), BranchArm(0.4, Step("b"))))
        steps = [single("a", 2.0), single("b", 2.0)]
        violations = validate_chain(chain, steps)
        assert len(violations) == 1
        assert "sum 0.9" in violations[0].message

    def test_iteration_p_exit_domain(self):
        violations = validate_chain(Iteration(Step("a"), 0.0), [single("a", 2.0)])
        assert any("p_exit" in v.message and "(0, 1]" in v.message for v in violations)

    def test_well_formed_sequence_is_clean(self):
        steps = [single("a", 2.0), single("b", 3.0), single("c", 4.0)]
        chain = Sequence((Step("a"), Step("b"), Step("c")))
        assert validate_chain(chain, steps) == []

    def test_unknown_step_reference(self):
        violations = validate_chain(Step("ghost"), [single("a", 1.0)])
        assert violations and "unknown step" in violations[0].message

    def test_step_reuse_is_rejected(self):
        chain = Sequence((Step("a"), Step("a")))
        violations = validate_chain(chain, [single("a", 2.0)])
        assert any("already used" in v.message for v in violations)
        assert violations[0].path.startswith("tree.children[1]")

    def test_parallel_needs_two_branches(self):
        violations = validate_chain(Parallel((Step("a"),)), [single("a", 2.0)])
        assert any("at least 2 branches" in v.message for v in violations)

    def test_branch_needs_two_arms(self):
        violations = validate_chain(Branch((BranchArm(1.0, Step("a")),)), [single("a", 2.0)])
        assert any("at least 2 arms" in v.message for v in violations)

    def test_empty_sequence_flagged(self):
        violations = validate_chain(Sequence(()), [])
        assert any("empty sequence" in v.message for v in violations)

    def test_violation_paths_locate_nested_nodes(self):
        chain = Sequence((Branch((BranchArm(0.5, Step("a")), BranchArm(0.5, Iteration(Step("b"), 2.0)))),))
        steps = [single("a", 2.0), single("b", 2.0)]
        violations = validate_chain(chain, steps)
        assert [v.path for v in violations] == ["tree.children[0].arms[1].body"]


class TestStructureFactors:
    def test_root_step_has_unit_factors(self):
        factors = structure_factors(Sequence((Step("a"), Step("b"))))
        assert factors["a"] == (1.0, 1.0)
        assert factors["b"] == (1.0, 1.0)

    def test_branch_arm_probability_becomes_kappa(self):
        chain = Branch((BranchArm(0.3, Step("a")), BranchArm(0.7, Step("b"))))
        factors = structure_factors(chain)
        assert factors["a"].kappa == pytest.approx(0.3)
        assert factors["b"].kappa == pytest.approx(0.7)

    def test_nested_iteration_in_branch_composes_multiplicatively(self):
        chain = Branch((
            BranchArm(0.5, Iteration(Step("a"), 0.5)),
            BranchArm(0.5, Step("b")),
        ))
        factors = structure_factors(chain)
        assert factors["a"].kappa == pytest.approx(1.0)  # (1/0.5) * 0.5

    def test_invalid_chain_raises(self):
        with pytest.raises(InvalidChain):
            structure_factors(Iteration(Step("a"), 0.0))

    def test_branch_arm_kappas_conserve_flow(self):
        # the per-level kappa factors of the arms of any branch sum to one,
        # so splitting a stream over the arms preserves the total rate
        chain = Branch((
            BranchArm(0.2, Step("a")),
            BranchArm(0.3, Step("b")),
            BranchArm(0.5, Step("c")),
        ))
        factors = structure_factors(chain)
        assert sum(f.kappa for f in factors.values()) == pytest.approx(1.0, abs=1e-9)

    def test_iteration_amplifies_kappa(self):
        chain = Iteration(Sequence((Step("a"), Step("b"))), 0.25)
        factors = structure_factors(chain)
        assert factors["a"].kappa == pytest.approx(4.0)
        assert factors["b"].kappa == pytest.approx(4.0)

    def test_parallel_is_rate_neutral(self):
        chain = Parallel((Step("a"), Step("b"), Step("c")))
        factors = structure_factors(chain)
        assert all(f.kappa == 1.0 for f in factors.values())


class TestEffectiveRates:
    def test_single_task_single_step(self):
        steps = [single("s", 2.0)]
        loads = effective_rates(Step("s"), steps, [Task("t", 1.0)], Assignment({"t": {"s": 0}}))
        assert loads[("s", 0)] == 1.0

    def test_superposition_on_shared_candidate(self):
        steps = [AbstractStep("s", (svc(4.0, "c0"), svc(4.0, "c1")))]
        tasks = [Task("t1", 1.0), Task("t2", 2.0)]
        assignment = Assignment({"t1": {"s": 0}, "t2": {"s": 0}})
        loads = effective_rates(Step("s"), steps, tasks, assignment)
        assert loads[("s", 0)] == 3.0
        assert loads[("s", 1)] == 0.0

    def test_branch_thinning(self):
        steps = [single("a", 2.0), single("b", 2.0)]
        chain = Branch((BranchArm(0.25, Step("a")), BranchArm(0.75, Step("b"))))
        loads = effective_rates(chain, steps, [Task("t", 1.0)], Assignment({"t": {"a": 0, "b": 0}}))
        assert loads[("a", 0)] == pytest.approx(0.25)
        assert loads[("b", 0)] == pytest.approx(0.75)

    def test_loads_finite_and_nonnegative_on_random_chains(self):
        for seed in range(20):
            tree, steps, tasks, assignment = random_instance(seed)
            loads = effective_rates(tree, steps, tasks, assignment)
            assert all(v >= 0.0 and v < float("inf") for v in loads.values())

    def test_iteration_amplification(self):
        steps = [single("s", 5.0)]
        chain = Iteration(Step("s"), 0.5)
        loads = effective_rates(chain, steps, [Task("t", 1.0)], Assignment({"t": {"s": 0}}))
        assert loads[("s", 0)] == pytest.approx(2.0)

    def test_parallel_branches_receive_full_rate(self):
        steps = [single("a", 3.0), single("b", 3.0)]
        chain = Parallel((Step("a"), Step("b")))
        loads = effective_rates(chain, steps, [Task("t", 1.0)], Assignment({"t": {"a": 0, "b": 0}}))
        assert loads[("a", 0)] == 1.0
        assert loads[("b", 0)] == 1.0

    def test_linear_in_each_task_rate(self):
        tree, steps, tasks, assignment = random_instance(11)
        loads = effective_rates(tree, steps, tasks, assignment)
        doubled = [Task(t.id, t.arrival_rate * 2) if i == 0 else t for i, t in enumerate(tasks)]
        loads2 = effective_rates(tree, steps, doubled, assignment)
        t0 = tasks[0]
        for key, value in loads.items():
            sid, j = key
            uses = assignment.candidate(t0.id, sid) == j
            if uses:
                contrib = loads2[key] - value
                # the doubled task adds exactly its old contribution again
                base = effective_rates(tree, steps, [t0], Assignment({t0.id: assignment.choices[t0.id]}))
                assert contrib == pytest.approx(base[key], rel=1e-12)
            else:
                assert loads2[key] == value

    def test_incomplete_assignment_rejected(self):
        steps = [single("a", 2.0), single("b", 2.0)]
        chain = Sequence((Step("a"), Step("b")))
        with pytest.raises(IncompleteAssignment) as exc:
            effective_rates(chain, steps, [Task("t", 1.0)], Assignment({"t": {"a": 0}}))
        assert ("t", "b") in exc.value.missing

    def test_candidate_index_out_of_range_rejected(self):
        steps = [single("a", 2.0)]
        with pytest.raises(IncompleteAssignment):
            effective_rates(Step("a"), steps, [Task("t", 1.0)], Assignment({"t": {"a": 5}}))

    def test_invalid_chain_rejected(self):
        steps = [single("a", 2.0)]
        with pytest.raises(InvalidChain):
            effective_rates(Iteration(Step("a"), 0.0), steps, [Task("t", 1.0)], Assignment({"t": {"a": 0}}))

    def test_structure_factors_ignore_rates(self):
        # same tree with different candidate rates yields identical factors
        chain = Iteration(Step("a"), 0.5)
        assert structure_factors(chain) == structure_factors(Iteration(Step("a"), 0.5))
