from __future__ import annotations

import pytest

from chainlat import (
    AbstractStep,
    Assignment,
    Branch,
    BranchArm,
    BranchMode,
    CandidateService,
    InvalidConfig,
    Iteration,
    ModelMismatch,
    Parallel,
    Sequence,
    SimConfig,
    Step,
    Task,
    UnstableModel,
    compare,
    little_check,
    response_times,
    simulate,
)
from chainlat.simulate import _run_replication

SMALL = dict(jobs_per_task=4000, replications=4)


def mm1_model(mu=2.0, lam=1.0):
    steps = [AbstractStep("s", (CandidateService("c", mu),))]
    tasks = [Task("t", lam)]
    return Step("s"), steps, tasks, Assignment({"t": {"s": 0}})


class TestConfig:
    def test_defaults_are_sane(self):
        config = SimConfig(seed=1)
        assert config.replications >= 2
        assert 0 <= config.warmup_fraction < 1

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(seed=-1),
            dict(seed=1, jobs_per_task=0),
            dict(seed=1, warmup_fraction=1.0),
            dict(seed=1, replications=1),
            dict(seed=1, confidence_level=0.0),
            dict(seed=1, workers=0),
        ],
    )
    def test_bad_values_rejected(self, kwargs):
        with pytest.raises(InvalidConfig):
            SimConfig(**kwargs)


class TestDeterminism:
    def test_identical_config_identical_report(self):
        chain, steps, tasks, assignment = mm1_model()
        config = SimConfig(seed=11, jobs_per_task=2000, replications=3)
        first = simulate(chain, steps, tasks, assignment, config)
        second = simulate(chain, steps, tasks, assignment, config)
        assert first == second

    def test_seed_changes_output(self):
        chain, steps, tasks, assignment = mm1_model()
        a = simulate(chain, steps, tasks, assignment, SimConfig(seed=1, jobs_per_task=2000, replications=3))
        b = simulate(chain, steps, tasks, assignment, SimConfig(seed=2, jobs_per_task=2000, replications=3))
        assert a.tasks["t"].mean != b.tasks["t"].mean

    def test_worker_count_does_not_change_results(self):
        chain, steps, tasks, assignment = mm1_model()
        serial = simulate(chain, steps, tasks, assignment,
                          SimConfig(seed=5, jobs_per_task=1500, replications=3, workers=1))
        parallel = simulate(chain, steps, tasks, assignment,
                            SimConfig(seed=5, jobs_per_task=1500, replications=3, workers=2))
        assert serial.tasks == parallel.tasks
        assert serial.stations == parallel.stations


class TestAgainstTheory:
    def test_mm1_mean_sojourn(self):
        chain, steps, tasks, assignment = mm1_model()
        report = simulate(chain, steps, tasks, assignment, SimConfig(seed=3, **SMALL))
        assert report.tasks["t"].mean == pytest.approx(1.0, rel=0.10)
        assert report.stations[0].utilization == pytest.approx(0.5, abs=0.05)

    def test_little_law_residuals_small(self):
        chain, steps, tasks, assignment = mm1_model()
        report = simulate(chain, steps, tasks, assignment,
                          SimConfig(seed=3, jobs_per_task=20_000, replications=4))
        residuals = little_check(report)
        assert residuals and all(r < 0.03 for _, r in residuals)

    def test_branch_thinning_throughput(self):
        steps = [
            AbstractStep("a", (CandidateService("c", 4.0),)),
            AbstractStep("b", (CandidateService("c", 4.0),)),
        ]
        chain = Branch((BranchArm(0.25, Step("a")), BranchArm(0.75, Step("b"))))
        tasks = [Task("t", 1.0)]
        assignment = Assignment({"t": {"a": 0, "b": 0}})
        report = simulate(chain, steps, tasks, assignment, SimConfig(seed=4, jobs_per_task=8000, replications=4))
        by_step = {st.step_id: st for st in report.stations}
        assert by_step["a"].throughput == pytest.approx(0.25, rel=0.03)
        assert by_step["b"].throughput == pytest.approx(0.75, rel=0.03)

    def test_unassigned_candidate_never_visited_and_omitted_from_little(self):
        steps = [AbstractStep("s", (CandidateService("c0", 2.0), CandidateService("c1", 2.0)))]
        tasks = [Task("t", 1.0)]
        assignment = Assignment({"t": {"s": 0}})
        report = simulate(Step("s"), steps, tasks, assignment, SimConfig(seed=1, jobs_per_task=500, replications=2))
        idle = [st for st in report.stations if st.candidate_index == 1]
        assert idle[0].visits == 0
        assert all(label != "s/c1" for label, _ in little_check(report))

    def test_mean_occupancy_matches_mm1_formula(self):
        # L = rho / (1 - rho) = 1.0 at rho = 0.5
        chain, steps, tasks, assignment = mm1_model()
        report = simulate(chain, steps, tasks, assignment,
                          SimConfig(seed=5, jobs_per_task=20_000, replications=8))
        assert report.stations[0].mean_jobs == pytest.approx(1.0, rel=0.03)

    def test_fork_join_matches_exact_two_branch_value(self):
        # two identical branches: the exact homogeneous 2-way fork-join mean
        # is (12 - rho) / 8 times the single-station sojourn
        steps = [
            AbstractStep("x", (CandidateService("c", 2.0),)),
            AbstractStep("y", (CandidateService("c", 2.0),)),
        ]
        chain = Parallel((Step("x"), Step("y")))
        tasks = [Task("t", 1.0)]
        assignment = Assignment({"t": {"x": 0, "y": 0}})
        report = simulate(chain, steps, tasks, assignment,
                          SimConfig(seed=5, jobs_per_task=20_000, replications=8))
        exact = (12 - 0.5) / 8 * 1.0
        assert report.tasks["t"].mean == pytest.approx(exact, rel=0.03)
        # and the analytic key-path value stays a lower bound
        assert 1.0 <= report.tasks["t"].mean

    def test_unequal_rate_streams_sharing_a_branch(self):
        # streams with different rates must both see the full steady-state
        # load; the slower stream's jobs are the regression case here
        steps = [
            AbstractStep("l", (CandidateService("a", 5.0), CandidateService("b", 4.0))),
            AbstractStep("r", (CandidateService("a", 5.0),)),
        ]
        chain = Branch((BranchArm(0.4, Step("l")), BranchArm(0.6, Step("r"))))
        tasks = [Task("t1", 1.0), Task("t2", 0.5)]
        assignment = Assignment({"t1": {"l": 0, "r": 0}, "t2": {"l": 1, "r": 0}})
        analytic = response_times(chain, steps, tasks, assignment, mode=BranchMode.EXPECTED)
        report = simulate(chain, steps, tasks, assignment,
                          SimConfig(seed=37, jobs_per_task=15_000, replications=8))
        result = compare(analytic, report)
        assert result.all_within_ci
        assert all(row.rel_error < 0.03 for row in result.tasks)

    def test_unequal_rate_streams_in_a_feedback_loop(self):
        steps = [AbstractStep("loop", (CandidateService("a", 6.0), CandidateService("b", 5.0)))]
        chain = Iteration(Step("loop"), 0.5)
        tasks = [Task("t1", 0.8), Task("t2", 0.6)]
        assignment = Assignment({"t1": {"loop": 0}, "t2": {"loop": 1}})
        analytic = response_times(chain, steps, tasks, assignment)
        assert analytic["t1"] == pytest.approx(2 / 4.4, rel=1e-12)
        assert analytic["t2"] == pytest.approx(2 / 3.8, rel=1e-12)
        report = simulate(chain, steps, tasks, assignment,
                          SimConfig(seed=29, jobs_per_task=15_000, replications=8))
        assert compare(analytic, report).all_within_ci

    def test_feedback_total_sojourn(self):
        steps = [AbstractStep("s", (CandidateService("c", 3.0),))]
        chain = Iteration(Step("s"), 0.5)
        tasks = [Task("t", 1.0)]
        assignment = Assignment({"t": {"s": 0}})
        report = simulate(chain, steps, tasks, assignment, SimConfig(seed=8, jobs_per_task=8000, replications=4))
        assert report.tasks["t"].mean == pytest.approx(2.0, rel=0.10)
        # station sees the amplified rate
        assert report.stations[0].throughput == pytest.approx(2.0, rel=0.05)


class TestRefusalAndComparison:
    def test_saturated_model_refused(self):
        chain, steps, tasks, assignment = mm1_model(mu=1.0, lam=1.0)
        with pytest.raises(UnstableModel):
            simulate(chain, steps, tasks, assignment, SimConfig(seed=1))

    def test_iteration_amplification_refused(self):
        steps = [AbstractStep("s", (CandidateService("c", 3.0),))]
        chain = Iteration(Step("s"), 0.5)
        with pytest.raises(UnstableModel) as exc:
            simulate(chain, steps, [Task("t", 1.6)], Assignment({"t": {"s": 0}}), SimConfig(seed=1))
        assert exc.value.lambda_eff == pytest.approx(3.2)

    def test_compare_flags_and_errors(self):
        chain, steps, tasks, assignment = mm1_model()
        report = simulate(chain, steps, tasks, assignment, SimConfig(seed=3, **SMALL))
        analytic = response_times(chain, steps, tasks, assignment)
        result = compare(analytic, report)
        row = result.tasks[0]
        assert row.analytic == 1.0
        assert row.rel_error == abs(1.0 - row.simulated) / row.simulated
        assert row.within_ci == (abs(1.0 - row.simulated) <= row.ci_halfwidth)

    def test_analytic_tandem_lies_within_simulated_ci(self):
        steps = [
            AbstractStep(f"s{i}", (CandidateService("c", m),))
            for i, m in enumerate((2.0, 3.0, 4.0))
        ]
        chain = Sequence(tuple(Step(s.id) for s in steps))
        tasks = [Task("t", 1.0)]
        assignment = Assignment({"t": {s.id: 0 for s in steps}})
        report = simulate(chain, steps, tasks, assignment,
                          SimConfig(seed=23, jobs_per_task=20_000, replications=10))
        result = compare(response_times(chain, steps, tasks, assignment), report)
        assert result.all_within_ci

    def test_compare_rejects_mismatched_tasks(self):
        chain, steps, tasks, assignment = mm1_model()
        report = simulate(chain, steps, tasks, assignment, SimConfig(seed=1, jobs_per_task=500, replications=2))
        with pytest.raises(ModelMismatch):
            compare({"other": 1.0}, report)


class TestEventOrdering:
    def test_fifo_order_and_causality_per_station(self):
        steps = [
            AbstractStep("a", (CandidateService("c", 2.5),)),
            AbstractStep("b", (CandidateService("c", 3.5),)),
        ]
        chain = Sequence((Step("a"), Step("b")))
        tasks = [Task("t", 1.5)]
        assignment = Assignment({"t": {"a": 0, "b": 0}})
        trace: list = []
        _run_replication(chain, tuple(steps), tuple(tasks), assignment,
                         SimConfig(seed=2, jobs_per_task=500, replications=2), 0, trace=trace)

        arrivals: dict = {}
        departures: dict = {}
        arrival_time: dict = {}
        for t, kind, key, vid in trace:
            if kind == "arr":
                arrivals.setdefault(key, []).append(vid)
                arrival_time[vid] = t
            else:
                departures.setdefault(key, []).append(vid)
                assert t >= arrival_time[vid]
        for key, arrived in arrivals.items():
            assert departures[key] == arrived
