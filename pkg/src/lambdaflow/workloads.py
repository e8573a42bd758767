"""Job arrival patterns, run configuration, and the multi-job bench.

A bench submits every job of a workload into one simulation and samples, at
a fixed interval, the vCPUs in use, running and pending jobs, and the cost
accrued so far.  Optionally the same arrivals are replayed on the VM
baseline using each job's serverless vCPU-seconds.
"""

from __future__ import annotations

import bisect
import csv
import dataclasses
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .apps import get_app
from .goals import GoalSpec
from .orchestrator import Job
from .runtime import DurationModel
from .scheduler import POLICIES
from .session import make_session
from .simulator import ClusterModel
from .vm import VmBaselineModel, vm_baseline_run

WORKLOAD_KINDS = ("single", "uniform", "bursty", "diurnal")
BENCH_COLUMNS = ("system", "time_s", "vcpus_in_use", "running_jobs", "pending_jobs",
                 "cumulative_cost")


@dataclass
class JobTemplate:
    app: str = "compression"
    input_bytes: int = 100_000
    split_size: Optional[int] = None
    goal: dict = field(default_factory=lambda: {"kind": "best_effort", "value": None})
    priority: int = 0

    def __post_init__(self):
        get_app(self.app)
        if self.input_bytes <= 0:
            raise ValueError("input_bytes must be > 0")
        GoalSpec.from_dict(self.goal)


@dataclass
class WorkloadSpec:
    kind: str = "single"
    interval_s: float = 10.0
    duration_s: float = 600.0
    burst_size: int = 100
    burst_period_s: float = 300.0
    period_s: float = 600.0
    peak_jobs_per_interval: int = 15
    job: JobTemplate = field(default_factory=JobTemplate)

    def __post_init__(self):
        if self.kind not in WORKLOAD_KINDS:
            raise ValueError(f"unknown workload kind {self.kind!r}")
        for name in ("interval_s", "duration_s", "burst_period_s", "period_s"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.burst_size < 1 or self.peak_jobs_per_interval < 0:
            raise ValueError("burst_size must be >= 1 and peak_jobs_per_interval >= 0")
        if isinstance(self.job, dict):
            self.job = JobTemplate(**self.job)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def to_dict(self):
        return dataclasses.asdict(self)


def _triangle(phase):
    """0 -> 1 -> 0 over one period; ``phase`` in [0, 1)."""
    return 1 - abs(2 * phase - 1)


def arrivals(spec):
    """Sorted submission times in seconds."""
    if spec.kind == "single":
        return [0.0]
    slots = int(round(spec.duration_s / spec.interval_s))
    times = []
    if spec.kind == "uniform":
        times = [k * spec.interval_s for k in range(slots)]
    elif spec.kind == "bursty":
        times = [k * spec.interval_s for k in range(slots)]
        t = spec.burst_period_s
        while t < spec.duration_s:
            times += [t] * spec.burst_size
            t += spec.burst_period_s
    else:
        for k in range(slots):
            t = k * spec.interval_s
            n = int(round(spec.peak_jobs_per_interval *
                          _triangle((t % spec.period_s) / spec.period_s)))
            times += [t] * n
    return sorted(times)


@dataclass
class RunConfig:
    cluster: ClusterModel = field(default_factory=ClusterModel)
    scheduler: str = "fifo"
    seed: int = 0
    fault_tolerance: bool = True
    monitor_interval_ms: int = 1000
    durations: dict = field(default_factory=dict)
    workload: WorkloadSpec = field(default_factory=WorkloadSpec)
    vm: VmBaselineModel = field(default_factory=VmBaselineModel)
    sample_interval_s: float = 1.0
    output_dir: Optional[str] = None

    def __post_init__(self):
        if isinstance(self.cluster, dict):
            self.cluster = ClusterModel.from_dict(self.cluster)
        if isinstance(self.workload, dict):
            self.workload = WorkloadSpec.from_dict(self.workload)
        if isinstance(self.vm, dict):
            self.vm = VmBaselineModel.from_dict(self.vm)
        if self.scheduler not in POLICIES:
            raise ValueError(f"unknown scheduler {self.scheduler!r}; expected one of {POLICIES}")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")
        if self.monitor_interval_ms <= 0 or self.sample_interval_s <= 0:
            raise ValueError("intervals must be > 0")
        DurationModel.from_dict(self.durations)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown run-config fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def with_seed(self, seed):
        return dataclasses.replace(
            self, seed=seed, cluster=dataclasses.replace(self.cluster, rng_seed=seed))

    def to_dict(self):
        return dataclasses.asdict(self)

    def session(self, **kw):
        return make_session(self.cluster, scheduler=self.scheduler,
                            fault_tolerance=self.fault_tolerance,
                            monitor_interval_ms=self.monitor_interval_ms,
                            durations=DurationModel.from_dict(self.durations), **kw)


# -- sampling ------------------------------------------------------------------------------

@dataclass
class Sample:
    system: str
    time_s: float
    vcpus_in_use: int
    running_jobs: int
    pending_jobs: int
    cumulative_cost: float

    def row(self):
        return (self.system, self.time_s, self.vcpus_in_use, self.running_jobs,
                self.pending_jobs, repr(self.cumulative_cost))


def sample_times(end_s, interval_s):
    n = int(math.floor(end_s / interval_s)) + 1
    return [round(k * interval_s, 9) for k in range(n)]


def serverless_samples(session, times_s):
    """Aggregates at each time, recomputed from the trace and billing records."""
    sim = session.sim
    starts, ends = [], []
    first_start = {}
    for e in sim.trace:
        if e.event == "start":
            starts.append(e.time_ms)
            first_start.setdefault(e.job, e.time_ms)
        elif e.event == "end":
            ends.append(e.time_ms)
    jobs = session.orch.jobs
    vcpus = sim.model.vcpus_per_function
    out = []
    for t in times_s:
        tm = int(round(t * 1000))
        running_fns = bisect.bisect_right(starts, tm) - bisect.bisect_right(ends, tm)
        pending = running = 0
        for job_id, job in jobs.items():
            if job.submitted_at > tm or (job.finished_at is not None and job.finished_at <= tm):
                continue
            fs = first_start.get(job_id)
            if fs is None or fs > tm:
                pending += 1
            else:
                running += 1
        out.append(Sample("serverless", t, running_fns * vcpus, running, pending,
                          sim.cumulative_cost(tm)))
    return out


def vm_samples(result, times_s):
    out = []
    for t in times_s:
        st = result.state_at(t)
        out.append(Sample("vm", t, st.vcpus_in_use if st else 0,
                          st.running_jobs if st else 0, st.pending_jobs if st else 0,
                          result.cost(t)))
    return out


# -- bench ------------------------------------------------------------------------------------

@dataclass
class BenchResult:
    config: RunConfig
    session: object
    job_ids: list
    arrivals_s: list
    samples: list
    vm: object = None
    vm_samples: list = field(default_factory=list)

    def jobs(self):
        return [dict(self.session.orch.job_summary(j), arrival_s=a)
                for j, a in zip(self.job_ids, self.arrivals_s)]

    def completion_times_s(self):
        out = []
        for j in self.job_ids:
            job = self.session.orch.jobs[j]
            if job.state == "done":
                out.append(job.makespan_ms / 1000)
        return out

    @property
    def mean_completion_s(self):
        ct = self.completion_times_s()
        return sum(ct) / len(ct) if ct else math.inf

    @property
    def max_running(self):
        return self.session.sim.max_running

    def vcpu_seconds(self, job_id):
        vc = self.session.sim.model.vcpus_per_function
        return sum((r.end - r.start) / 1000 * vc
                   for r in self.session.sim.ledger.records if r.job == job_id)

    def summary(self):
        jobs = self.jobs()
        d = {
            "seed": self.config.seed,
            "workload": self.config.workload.kind,
            "jobs": len(jobs),
            "done": sum(1 for j in jobs if j["state"] == "done"),
            "mean_completion_s": self.mean_completion_s,
            "max_running_functions": self.max_running,
            "concurrency_limit": self.config.cluster.concurrency_limit,
            "cost_rate": self.config.cluster.cost_rate,
            "cost": self.session.sim.cost(),
        }
        if self.vm is not None:
            d["vm_mean_completion_s"] = self.vm.mean_completion_s
            d["vm_cost"] = self.vm.cost()
        return d

    def csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(BENCH_COLUMNS)
        for s in self.samples + self.vm_samples:
            w.writerow(s.row())
        return buf.getvalue()

    def write(self, outdir):
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "bench.csv").write_text(self.csv(), encoding="utf-8")
        (outdir / "jobs.json").write_text(json.dumps(self.jobs(), indent=2, sort_keys=True),
                                          encoding="utf-8")
        (outdir / "summary.json").write_text(json.dumps(self.summary(), indent=2,
                                                        sort_keys=True), encoding="utf-8")
        self.session.sim.write_trace_csv(outdir / "trace.csv")
        return outdir


def bench(config, baseline_vm=False):
    """Run the configured workload; returns a :class:`BenchResult`."""
    spec = config.workload
    tmpl = spec.job
    app = get_app(tmpl.app)
    builder = app.build(split_size=tmpl.split_size) if tmpl.split_size else app.build()
    compiled = builder.compile()
    s = config.session()
    for k, v in sorted(app.make_tables(config.seed).items()):
        s.store.put(k, v)
    data = app.make_input(tmpl.input_bytes, config.seed)
    times = arrivals(spec)
    job_ids = []
    for i, t in enumerate(times):
        key = s.put_input(f"inputs/{i:05d}", data)
        job = Job(compiled, key, goal=GoalSpec.from_dict(tmpl.goal), priority=tmpl.priority,
                  job_id=f"job-{i:05d}", seed=config.seed)
        job_ids.append(job.job_id)
        s.sim.schedule(int(round(t * 1000)), s.orch.submit, job)
    s.run()
    s.orch.finalize()
    end_s = s.sim.now / 1000
    result = BenchResult(config, s, job_ids, times, [])
    if baseline_vm:
        result.vm = vm_baseline_run(times, [result.vcpu_seconds(j) for j in job_ids], config.vm)
        end_s = max(end_s, result.vm.samples[-1].time_s)
    grid = sample_times(end_s, config.sample_interval_s)
    result.samples = serverless_samples(s, grid)
    if result.vm is not None:
        result.vm_samples = vm_samples(result.vm, grid)
    return result
