"""Reproducible provisioning experiments.

* :func:`synthetic_stream` feeds a stream of jobs drawn from a few job types
  with rank-1 true runtimes ``a_type * b_column`` through the provisioner and
  reports the prediction error on every chosen column.
* :func:`optimality_trial` compares the provisioner's choice with the best
  column found by exhaustively simulating a :class:`SplitJobModel`.
* :func:`cost_scenario` pits the provisioner against fixed 1MB and
  max-concurrency splits on a job whose large tasks brush the function timeout.
"""

from __future__ import annotations

import math
import random
import statistics
from dataclasses import dataclass, field

from .goals import GoalSpec
from .provisioner import (
    MB, Choice, Observation, ProfileTable, Provisioner, SgdSettings, choose,
    column_id, fingerprint, max_concurrency_split, plan_canary, scale_canary,
    split_grid,
)
from .simulator import ClusterModel


def median_error(observations):
    return statistics.median(o.relative_error for o in observations)


# -- rank-1 synthetic stream ---------------------------------------------------------

@dataclass
class StreamResult:
    observations: list
    first: float = 0.0
    last: float = 0.0
    overall: float = 0.0


def synthetic_stream(seed=0, n_jobs=20, n_types=5, n_columns=8, canary_noise=0.25,
                     run_noise=0.02, reference_rows=1, settings=SgdSettings()):
    """Stream ``n_jobs`` jobs through canary -> choose -> measure -> record.

    Columns ``0`` and ``n_columns - 1`` are the canary probes.  The table
    starts with ``reference_rows`` fully profiled rows of an unrelated type.
    Canary estimates carry a uniform relative error of ``canary_noise``;
    full runs carry ``run_noise``.
    """
    rng = random.Random(seed)
    a = [rng.uniform(1.0, 10.0) for _ in range(n_types + reference_rows)]
    b = [rng.uniform(1.0, 10.0) for _ in range(n_columns)]
    cols = [column_id(((j + 1) * MB,)) for j in range(n_columns)]
    table = ProfileTable()
    for r in range(reference_rows):
        for j, c in enumerate(cols):
            table.record(f"ref{r}", c, a[n_types + r] * b[j], True, "full")
    prov = Provisioner(table, settings=settings)
    probes = (cols[0], cols[-1])
    for _ in range(n_jobs):
        t = rng.randrange(n_types)
        row = f"type{t}"
        truth = {c: a[t] * b[j] * (1 + run_noise * (2 * rng.random() - 1))
                 for j, c in enumerate(cols)}
        for c in probes:
            cell = table.cell(row, c)
            if cell is None or cell.source != "full":
                est = truth[c] * (1 + canary_noise * (2 * rng.random() - 1))
                table.record(row, c, est, True, "canary")
        table.complete(settings=settings)
        choice = choose(table, row, GoalSpec.best_effort(), 1, columns=cols)
        prov.observe_choice(choice, truth[choice.column])
    obs = prov.history
    half = n_jobs // 2
    return StreamResult(obs, median_error(obs[:half]), median_error(obs[half:]),
                        median_error(obs))


# -- exhaustive optimality -------------------------------------------------------------

def _family(rng):
    from .provisioner import SplitJobModel
    lam = rng.choice((16, 32, 64))
    return dict(
        fixed_s=rng.uniform(0.5, 3.0),
        per_mb_s=rng.uniform(0.2, 2.0),
        partition_per_task_s=rng.uniform(0.0, 0.08),
        combine_per_task_s=rng.uniform(0.0, 0.08),
        jitter=0.05,
        cluster=ClusterModel(concurrency_limit=lam, spawn_latency_ms=50),
    ), SplitJobModel


@dataclass
class TrialResult:
    seed: int
    chosen: int
    chosen_runtime: float
    optimum: int
    optimum_runtime: float
    runtimes: dict = field(default_factory=dict)

    @property
    def ratio(self):
        return self.chosen_runtime / self.optimum_runtime


def provision_split_job(prov, model, name, goal, seed):
    """Canary, choose and measure one :class:`SplitJobModel` job."""
    choice = prov.provision(name, model.input_bytes, 1, goal, model.runner(seed))
    run = model.run(choice.sizes[0], seed)
    prov.observe_choice(choice, run.runtime_s)
    return choice, run


def profile_history(prov, jobs, rng, seed, coverage):
    """Record full runs of each ``(name, model)`` on a random share of its columns."""
    for k, (name, m) in enumerate(jobs):
        row = fingerprint(name, m.input_bytes)
        cols = m.columns()
        keep = [s for s in cols if rng.random() < coverage] or [rng.choice(cols)]
        for s in keep:
            run = m.run(s, seed + 1000 * (k + 1))
            prov.table.record(row, column_id((s,)), run.runtime_s, True, "full")


def similar_sizes(input_bytes, n, rng):
    """``n`` input sizes from the same log2 bucket as ``input_bytes``."""
    lo = 2 ** int(math.log2(input_bytes))
    return [int(rng.uniform(lo, 2 * lo)) for _ in range(n)]


def optimality_trial(seed, history_jobs=3, coverage=0.6, settings=SgdSettings()):
    """Profile earlier jobs of the same family and size bucket on part of
    their columns, provision a new job, and compare with its exhaustive
    optimum."""
    rng = random.Random(seed)
    params, SplitJobModel = _family(rng)
    lam = params["cluster"].concurrency_limit
    prov = Provisioner(max_lambdas=lam, settings=settings)
    target = SplitJobModel(int(rng.uniform(64, 512)) * MB, **params)
    history = [("job", SplitJobModel(d, **params))
               for d in similar_sizes(target.input_bytes, history_jobs, rng)]
    profile_history(prov, history, rng, seed, coverage)
    truth = {s: r.runtime_s for s, r in target.exhaustive(seed).items()}
    choice = prov.provision("job", target.input_bytes, 1, GoalSpec.best_effort(),
                            target.runner(seed))
    best = min(truth, key=truth.get)
    return TrialResult(seed, choice.sizes[0], truth[choice.sizes[0]], best, truth[best], truth)


# -- cost ordering under timeouts --------------------------------------------------------

@dataclass
class CostScenario:
    chosen: int
    costs: dict
    runtimes: dict
    default_split: int
    max_concurrency_split: int

    @property
    def chosen_cost(self):
        return self.costs[self.chosen]


def timeout_model(input_bytes=256 * MB, seed=0):
    """Large tasks at max concurrency run close to a 60 s function timeout."""
    from .provisioner import SplitJobModel
    return SplitJobModel(
        input_bytes, fixed_s=2.0, per_mb_s=3.6, partition_per_task_s=0.01,
        combine_per_task_s=0.01, jitter=0.10,
        cluster=ClusterModel(concurrency_limit=16, function_timeout_s=60.0,
                             straggler_prob=0.05, straggler_factor=3.0, rng_seed=seed))


def cost_scenario(seed=0, history_jobs=3, coverage=0.6):
    rng = random.Random(seed)
    target = timeout_model(seed=seed)
    lam = target.max_lambdas
    prov = Provisioner(max_lambdas=lam)
    history = [("job", timeout_model(d, seed))
               for d in similar_sizes(target.input_bytes, history_jobs, rng)]
    profile_history(prov, history, rng, seed, coverage)
    choice = prov.provision("job", target.input_bytes, 1, GoalSpec.best_effort(),
                            target.runner(seed))
    default = MB
    maxc = max_concurrency_split(target.input_bytes, lam)
    runs = {s: target.run(s, seed) for s in {choice.sizes[0], default, maxc}}
    return CostScenario(choice.sizes[0], {s: r.cost for s, r in runs.items()},
                        {s: r.runtime_s for s, r in runs.items()}, default, maxc)


# -- scheduling scenarios ------------------------------------------------------------------

def _spectra_job(split_size, n_bytes, seed):
    from .apps import proteomics_pipeline, spectra
    return proteomics_pipeline(split_size=split_size).compile(), spectra(n_bytes, seed)


@dataclass
class SchedulingRun:
    policy: str
    job_ids: list
    finished_ms: dict
    makespans_ms: dict
    session: object = None

    @property
    def completion_order(self):
        return sorted(self.job_ids, key=lambda j: (self.finished_ms[j], j))

    @property
    def spread_ms(self):
        ends = list(self.finished_ms.values())
        return max(ends) - min(ends)


def contention_run(policy, k=5, concurrency_limit=1, split_size=20_000, n_bytes=100_000,
                   seed=0):
    """``k`` identical jobs submitted together onto ``concurrency_limit`` slots."""
    from .session import make_session
    compiled, data = _spectra_job(split_size, n_bytes, seed)
    s = make_session(ClusterModel(concurrency_limit=concurrency_limit, rng_seed=seed),
                     scheduler=policy)
    key = s.put_input("inputs/spectra", data)
    ids = [s.submit(compiled, key, seed=seed) for _ in range(k)]
    s.run()
    jobs = s.orch.jobs
    return SchedulingRun(policy, ids, {j: jobs[j].finished_at for j in ids},
                         {j: jobs[j].makespan_ms for j in ids}, s)


PRIORITY_DURATIONS = {"split": (0.2, 0.0), "run:toy_score": (0.3, 0.0),
                      "combine": (0.2, 0.0)}


def priority_run(background=4, concurrency_limit=4, arrive_ms=2_000, seed=0):
    """Makespan of a high-priority job alone and behind low-priority load.

    Background tasks are short so that a preempted job's in-flight functions
    drain well within one monitor tick.
    """
    from .runtime import DurationModel
    from .session import make_session
    compiled, data = _spectra_job(10_000, 200_000, seed)
    high_c, high_data = _spectra_job(10_000, 40_000, seed + 1)

    def session():
        s = make_session(ClusterModel(concurrency_limit=concurrency_limit, rng_seed=seed),
                         scheduler="priority",
                         durations=DurationModel.from_dict(PRIORITY_DURATIONS))
        s.put_input("inputs/low", data)
        s.put_input("inputs/high", high_data)
        return s

    alone = session()
    alone.sim.schedule(arrive_ms, lambda: alone.submit(high_c, "inputs/high", priority=5,
                                                       job_id="high"))
    alone.run()
    loaded = session()
    for i in range(background):
        loaded.submit(compiled, "inputs/low", priority=0, job_id=f"low-{i}")
    loaded.sim.schedule(arrive_ms, lambda: loaded.submit(high_c, "inputs/high", priority=5,
                                                         job_id="high"))
    loaded.run()
    return alone, loaded
