"""Discrete-event simulation of the exact stochastic system.

Each task is an independent Poisson source; each candidate service is a
single-server FIFO station with exponential service times. Jobs traverse
the control-flow tree: sequences visit stations in order, parallels fork
one sub-job per branch and AND-join on the last completion, branches sample
one arm per job, and iterations repeat their body with the feedback
probability. The simulator exists to validate the analytic formulas, so it
refuses to run a model whose analytic utilization reaches one anywhere.

Determinism: a fixed (model, config) pair yields a bit-identical report.
Every task source, every station, and every routing decision point draws
from its own substream, seeded from the master seed and the replication
index, and the event queue breaks time ties by a monotone sequence number.
"""

from __future__ import annotations

import heapq
import itertools
import math
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import stats as _scipy_stats

from .errors import InvalidConfig, ModelMismatch, UnstableModel
from .model import (
    AbstractStep,
    Assignment,
    Branch,
    ChainNode,
    Iteration,
    Parallel,
    Sequence as SequenceNode,
    StationKey,
    Step,
    Task,
    normalized_arm_probs,
    step_table,
    tree_step_ids,
)
from .analytic import StabilityReport, stability_check

__all__ = [
    "SimConfig",
    "TaskSimStats",
    "StationSimStats",
    "SimReport",
    "TaskComparison",
    "StationComparison",
    "ComparisonReport",
    "simulate",
    "little_check",
    "compare",
]


@dataclass(frozen=True)
class SimConfig:
    """Reproducible simulation settings.

    ``jobs_per_task`` jobs are generated per task and replication; the first
    ``warmup_fraction`` of them (by arrival order) are discarded from the
    statistics. Replication means feed a Student-t confidence interval.
    """

    seed: int
    jobs_per_task: int = 20_000
    warmup_fraction: float = 0.2
    replications: int = 10
    confidence_level: float = 0.95
    workers: int = 1

    def __post_init__(self):
        if not (isinstance(self.seed, int) and self.seed >= 0):
            raise InvalidConfig(f"seed must be a non-negative integer, got {self.seed!r}")
        if not (isinstance(self.jobs_per_task, int) and self.jobs_per_task >= 1):
            raise InvalidConfig(f"jobs_per_task must be a positive integer, got {self.jobs_per_task!r}")
        if not (0.0 <= self.warmup_fraction < 1.0):
            raise InvalidConfig(f"warmup_fraction must be in [0, 1), got {self.warmup_fraction!r}")
        if not (isinstance(self.replications, int) and self.replications >= 2):
            raise InvalidConfig(f"replications must be an integer >= 2, got {self.replications!r}")
        if not (0.0 < self.confidence_level < 1.0):
            raise InvalidConfig(f"confidence_level must be in (0, 1), got {self.confidence_level!r}")
        if not (isinstance(self.workers, int) and self.workers >= 1):
            raise InvalidConfig(f"workers must be a positive integer, got {self.workers!r}")


@dataclass(frozen=True)
class TaskSimStats:
    """Aggregated end-to-end response of one task across replications."""

    mean: float
    ci_halfwidth: float
    count: int
    replication_means: tuple[float, ...]


@dataclass(frozen=True)
class StationSimStats:
    """Observed behaviour of one station, with its analytic counterparts."""

    step_id: str
    candidate_index: int
    candidate_id: str
    utilization: float
    mean_jobs: float
    mean_sojourn: float | None
    throughput: float
    visits: int
    lambda_eff: float
    mu: float
    rho: float

    @property
    def label(self) -> str:
        return f"{self.step_id}/{self.candidate_id}"


@dataclass(frozen=True)
class SimReport:
    """Simulation outcome: per-task means with confidence intervals and
    per-station time averages."""

    tasks: Mapping[str, TaskSimStats]
    stations: tuple[StationSimStats, ...]
    config: SimConfig


@dataclass(frozen=True)
class TaskComparison:
    task_id: str
    analytic: float
    simulated: float
    ci_halfwidth: float
    rel_error: float
    within_ci: bool


@dataclass(frozen=True)
class StationComparison:
    station: str
    rho_analytic: float
    rho_simulated: float


@dataclass(frozen=True)
class ComparisonReport:
    """Analytic predictions set against simulated observations."""

    tasks: tuple[TaskComparison, ...]
    stations: tuple[StationComparison, ...]

    @property
    def all_within_ci(self) -> bool:
        return all(t.within_ci for t in self.tasks)


# ---------------------------------------------------------------------------
# random substreams


class _ExpStream:
    """Buffered exponential variates at a fixed rate."""

    __slots__ = ("_rng", "_scale", "_buf", "_i")

    def __init__(self, rng: np.random.Generator, rate: float):
        self._rng = rng
        self._scale = 1.0 / rate
        self._buf = ()
        self._i = 0

    def draw(self) -> float:
        if self._i >= len(self._buf):
            self._buf = self._rng.exponential(self._scale, 4096)
            self._i = 0
        value = self._buf[self._i]
        self._i += 1
        return float(value)


class _UniformStream:
    """Buffered uniforms on [0, 1) for routing decisions."""

    __slots__ = ("_rng", "_buf", "_i")

    def __init__(self, rng: np.random.Generator):
        self._rng = rng
        self._buf = ()
        self._i = 0

    def draw(self) -> float:
        if self._i >= len(self._buf):
            self._buf = self._rng.random(4096)
            self._i = 0
        value = self._buf[self._i]
        self._i += 1
        return float(value)


def _substream_rng(seed: int, replication: int, index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=(replication, index))
    return np.random.Generator(np.random.PCG64(ss))


def _routing_nodes(chain: ChainNode) -> list[ChainNode]:
    """Branch and Iteration nodes in depth-first order; each one is an
    independent routing decision point."""
    found: list[ChainNode] = []

    def walk(node: ChainNode) -> None:
        match node:
            case SequenceNode(children=children):
                for c in children:
                    walk(c)
            case Parallel(branches=branches):
                for b in branches:
                    walk(b)
            case Branch(arms=arms):
                found.append(node)
                for a in arms:
                    walk(a.body)
            case Iteration(body=body):
                found.append(node)
                walk(body)
            case Step():
                pass

    walk(chain)
    return found


# ---------------------------------------------------------------------------
# one replication


class _Station:
    """Single exponential server with a FIFO queue and time-average counters."""

    __slots__ = (
        "key", "mu", "svc", "queue", "in_service", "n", "last_t",
        "area", "busy", "arrivals", "sojourn_sum", "sojourn_n", "snap",
    )

    def __init__(self, key: StationKey, mu: float):
        self.key = key
        self.mu = mu
        self.svc: _ExpStream | None = None
        self.queue: deque = deque()
        self.in_service = None
        self.n = 0
        self.last_t = 0.0
        self.area = 0.0
        self.busy = 0.0
        self.arrivals = 0
        self.sojourn_sum = 0.0
        self.sojourn_n = 0
        self.snap = (0.0, 0.0, 0, 0.0, 0)

    def advance(self, t: float) -> None:
        dt = t - self.last_t
        if dt > 0.0:
            self.area += self.n * dt
            if self.n > 0:
                self.busy += dt
            self.last_t = t

    def take_snapshot(self, t: float) -> None:
        self.advance(t)
        self.snap = (self.area, self.busy, self.arrivals, self.sojourn_sum, self.sojourn_n)

    def window_counters(self, t_end: float) -> tuple[float, float, int, float, int]:
        self.advance(t_end)
        a0, b0, n0, s0, c0 = self.snap
        return (
            self.area - a0,
            self.busy - b0,
            self.arrivals - n0,
            self.sojourn_sum - s0,
            self.sojourn_n - c0,
        )


@dataclass
class _RepStats:
    """Windowed counters of one replication, picklable for worker processes."""

    task_mean: dict[str, float]
    task_count: dict[str, int]
    stations: dict[StationKey, tuple[float, float, int, float, int]]
    window: float


def _run_replication(
    chain: ChainNode,
    steps: tuple[AbstractStep, ...],
    tasks: tuple[Task, ...],
    assignment: Assignment,
    config: SimConfig,
    replication: int,
    trace: list | None = None,
) -> _RepStats:
    table = step_table(steps)
    choices = {t.id: {sid: assignment.candidate(t.id, sid) for sid in tree_step_ids(chain)} for t in tasks}

    # Deterministic substream layout: sorted labels get stable indices.
    labels: list[tuple] = [("arr", t.id) for t in tasks]
    station_keys: list[StationKey] = []
    for sid in tree_step_ids(chain):
        for j in range(len(table[sid].candidates)):
            station_keys.append((sid, j))
            labels.append(("srv", sid, j))
    route_nodes = _routing_nodes(chain)
    labels.extend(("route", i) for i in range(len(route_nodes)))
    index_of = {label: i for i, label in enumerate(sorted(labels, key=repr))}

    def rng_for(label: tuple) -> np.random.Generator:
        return _substream_rng(config.seed, replication, index_of[label])

    arrivals = {t.id: _ExpStream(rng_for(("arr", t.id)), t.arrival_rate) for t in tasks}
    stations: dict[StationKey, _Station] = {}
    for sid, j in station_keys:
        st = _Station((sid, j), table[sid].candidates[j].mu)
        st.svc = _ExpStream(rng_for(("srv", sid, j)), st.mu)
        stations[(sid, j)] = st
    routes = {id(node): _UniformStream(rng_for(("route", i))) for i, node in enumerate(route_nodes)}
    arm_probs = {
        id(node): normalized_arm_probs(node.arms)
        for node in route_nodes
        if isinstance(node, Branch)
    }

    heap: list = []
    seq = itertools.count()
    visit_seq = itertools.count()

    def at(time: float, fn: Callable[[float], None]) -> None:
        heapq.heappush(heap, (time, next(seq), fn))

    def enter(st: _Station, t: float, done: Callable[[float], None]) -> None:
        st.advance(t)
        st.arrivals += 1
        st.n += 1
        visit = (t, done, next(visit_seq))
        if trace is not None:
            trace.append((t, "arr", st.key, visit[2]))
        if st.in_service is None:
            begin(st, t, visit)
        else:
            st.queue.append(visit)

    def begin(st: _Station, t: float, job) -> None:
        st.in_service = job
        at(t + st.svc.draw(), lambda tt, st=st: depart(st, tt))

    def depart(st: _Station, t: float) -> None:
        st.advance(t)
        arrived, done, vid = st.in_service
        st.n -= 1
        st.sojourn_sum += t - arrived
        st.sojourn_n += 1
        if trace is not None:
            trace.append((t, "dep", st.key, vid))
        if st.queue:
            begin(st, t, st.queue.popleft())
        else:
            st.in_service = None
        done(t)

    def run_node(node: ChainNode, t: float, task_id: str, done: Callable[[float], None]) -> None:
        match node:
            case Step(step_id=sid):
                enter(stations[(sid, choices[task_id][sid])], t, done)
            case SequenceNode(children=children):
                def step_i(i: int, tt: float) -> None:
                    if i == len(children):
                        done(tt)
                    else:
                        run_node(children[i], tt, task_id, lambda t2, i=i: step_i(i + 1, t2))
                step_i(0, t)
            case Parallel(branches=branches):
                remaining = [len(branches)]

                def branch_done(tt: float) -> None:
                    remaining[0] -= 1
                    if remaining[0] == 0:
                        done(tt)

                for branch in branches:
                    run_node(branch, t, task_id, branch_done)
            case Branch(arms=arms):
                u = routes[id(node)].draw()
                cum = 0.0
                chosen = arms[-1].body
                for arm, p in zip(arms, arm_probs[id(node)]):
                    cum += p
                    if u < cum:
                        chosen = arm.body
                        break
                run_node(chosen, t, task_id, done)
            case Iteration(body=body, p_exit=p_exit):
                stream = routes[id(node)]

                def body_done(tt: float) -> None:
                    if stream.draw() < 1.0 - p_exit:
                        run_node(body, tt, task_id, body_done)
                    else:
                        done(tt)

                run_node(body, t, task_id, body_done)

    warmup = math.floor(config.warmup_fraction * config.jobs_per_task)
    quota = config.jobs_per_task
    responses = {t.id: [0.0, 0] for t in tasks}
    t_end = [0.0]
    warm_pending = [len(tasks)] if warmup > 0 else [0]

    # Streams with unequal rates reach their quota at different times. To
    # keep every measured job in a fully loaded system, every stream keeps
    # generating (uncounted) arrivals until the slowest stream has produced
    # its quota; only then does generation stop everywhere.
    quota_pending = [len(tasks)]
    stopped = [False]

    def snapshot_all(t: float) -> None:
        for st in stations.values():
            st.take_snapshot(t)

    warm_t = [0.0]
    if warmup == 0:
        snapshot_all(0.0)

    def arrival(task: Task, k: int, t: float) -> None:
        if warmup > 0 and k == warmup - 1:
            warm_pending[0] -= 1
            if warm_pending[0] == 0:
                warm_t[0] = t
                snapshot_all(t)
        if k == quota - 1:
            quota_pending[0] -= 1
            if quota_pending[0] == 0:
                stopped[0] = True
        if not stopped[0]:
            at(t + arrivals[task.id].draw(), lambda tt, task=task, k=k: arrival(task, k + 1, tt))

        def job_done(tt: float, t0: float = t, k: int = k, tid: str = task.id) -> None:
            if warmup <= k < quota:
                acc = responses[tid]
                acc[0] += tt - t0
                acc[1] += 1
            if tt > t_end[0]:
                t_end[0] = tt

        run_node(chain, t, task.id, job_done)

    for task in tasks:
        at(arrivals[task.id].draw(), lambda tt, task=task: arrival(task, 0, tt))

    while heap:
        t, _, fn = heapq.heappop(heap)
        fn(t)

    window = t_end[0] - warm_t[0]
    return _RepStats(
        task_mean={tid: acc[0] / acc[1] for tid, acc in responses.items()},
        task_count={tid: acc[1] for tid, acc in responses.items()},
        stations={key: st.window_counters(t_end[0]) for key, st in stations.items()},
        window=window,
    )


def _replication_worker(args) -> _RepStats:
    return _run_replication(*args)


# ---------------------------------------------------------------------------
# public entry points


def simulate(
    chain: ChainNode,
    steps: Sequence[AbstractStep],
    tasks: Sequence[Task],
    assignment: Assignment,
    config: SimConfig,
) -> SimReport:
    """Run the event-driven simulation and aggregate across replications.

    Refuses saturated models with UnstableModel: their queues grow without
    bound and no steady-state mean exists. Replications are independent and
    may run in parallel (``config.workers``); results are combined in
    replication order, so the report does not depend on scheduling.
    """
    stability = stability_check(chain, steps, tasks, assignment)
    bad = stability.first_unstable()
    if bad is not None:
        raise UnstableModel(bad.label, bad.lambda_eff, bad.mu)

    steps = tuple(steps)
    tasks = tuple(tasks)
    jobs = [(chain, steps, tasks, assignment, config, r) for r in range(config.replications)]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            reps = list(pool.map(_replication_worker, jobs))
    else:
        reps = [_run_replication(*job) for job in jobs]

    return _aggregate(reps, tasks, stability, config)


def _aggregate(
    reps: list[_RepStats],
    tasks: tuple[Task, ...],
    stability: StabilityReport,
    config: SimConfig,
) -> SimReport:
    r = len(reps)
    tcrit = float(_scipy_stats.t.ppf(0.5 + config.confidence_level / 2.0, df=r - 1))

    task_stats: dict[str, TaskSimStats] = {}
    for task in tasks:
        means = np.array([rep.task_mean[task.id] for rep in reps])
        halfwidth = tcrit * float(means.std(ddof=1)) / math.sqrt(r)
        task_stats[task.id] = TaskSimStats(
            mean=float(means.mean()),
            ci_halfwidth=halfwidth,
            count=sum(rep.task_count[task.id] for rep in reps),
            replication_means=tuple(float(m) for m in means),
        )

    station_rows = []
    for st in stability.stations:
        key = (st.step_id, st.candidate_index)
        util = jobs_avg = tput = 0.0
        soj_sum = 0.0
        soj_n = 0
        visits = 0
        for rep in reps:
            area, busy, arrived, s_sum, s_n = rep.stations[key]
            util += busy / rep.window
            jobs_avg += area / rep.window
            tput += arrived / rep.window
            soj_sum += s_sum
            soj_n += s_n
            visits += arrived
        station_rows.append(
            StationSimStats(
                step_id=st.step_id,
                candidate_index=st.candidate_index,
                candidate_id=st.candidate_id,
                utilization=util / r,
                mean_jobs=jobs_avg / r,
                mean_sojourn=(soj_sum / soj_n) if soj_n else None,
                throughput=tput / r,
                visits=visits,
                lambda_eff=st.lambda_eff,
                mu=st.mu,
                rho=st.rho,
            )
        )

    return SimReport(tasks=task_stats, stations=tuple(station_rows), config=config)


def little_check(report: SimReport) -> list[tuple[str, float]]:
    """Little's-law residual |L - lambda_eff * W| / L per visited station.

    L and W are the simulated mean number in station and mean sojourn per
    visit; lambda_eff is the analytic rate. Stations with no visits are
    omitted.
    """
    out: list[tuple[str, float]] = []
    for st in report.stations:
        if st.visits == 0 or st.mean_sojourn is None or st.mean_jobs <= 0.0:
            continue
        residual = abs(st.mean_jobs - st.lambda_eff * st.mean_sojourn) / st.mean_jobs
        out.append((st.label, residual))
    return out


def compare(analytic: Mapping[str, float], report: SimReport) -> ComparisonReport:
    """Set analytic per-task times against the simulated means.

    Flags each task whose analytic value lies inside the simulated
    confidence interval. Task sets must match exactly.
    """
    if set(analytic) != set(report.tasks):
        raise ModelMismatch(
            f"analytic tasks {sorted(analytic)} != simulated tasks {sorted(report.tasks)}"
        )
    rows = []
    for task_id, stats in report.tasks.items():
        value = analytic[task_id]
        rows.append(
            TaskComparison(
                task_id=task_id,
                analytic=value,
                simulated=stats.mean,
                ci_halfwidth=stats.ci_halfwidth,
                rel_error=abs(value - stats.mean) / stats.mean,
                within_ci=abs(value - stats.mean) <= stats.ci_halfwidth,
            )
        )
    stations = tuple(
        StationComparison(st.label, st.rho, st.utilization) for st in report.stations
    )
    return ComparisonReport(tuple(rows), stations)
