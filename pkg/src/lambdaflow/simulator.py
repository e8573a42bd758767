"""Deterministic discrete-event model of a serverless platform.

Virtual time is an integer number of milliseconds.  Events are ordered by
``(time, sequence)`` so that runs with the same seed and workload produce
identical traces.

Lifecycle of one invocation::

    invoke --(slot free?)--> spawning --spawn_latency--> running --> end
           \\--(no slot)--> FIFO queue

A failed invocation hangs until the function timeout and produces nothing.
A straggler runs ``straggler_factor`` times longer; if that exceeds the
function timeout it ends as ``timed_out``.
"""

from __future__ import annotations

import csv
import dataclasses
import heapq
import io
import itertools
import math
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

DEFAULT_COST_RATE = 0.0000166667  # currency per GB-second

TRACE_COLUMNS = ("time_ms", "event", "job", "stage", "task", "detail")


@dataclass
class ClusterModel:
    concurrency_limit: int = 1000
    spawn_latency_ms: int = 50
    function_timeout_s: float = 900.0
    failure_prob: float = 0.0
    straggler_prob: float = 0.0
    straggler_factor: float = 10.0
    cost_rate: float = DEFAULT_COST_RATE
    vcpus_per_function: int = 2
    disk_limit_mb: int = 512
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("failure_prob", "straggler_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")
        if self.concurrency_limit <= 0:
            raise ValueError("concurrency_limit must be > 0")
        if self.spawn_latency_ms < 0:
            raise ValueError("spawn_latency_ms must be >= 0")
        if self.function_timeout_s <= 0:
            raise ValueError("function_timeout_s must be > 0")
        if self.straggler_factor < 1:
            raise ValueError("straggler_factor must be >= 1")
        if self.cost_rate < 0 or self.vcpus_per_function <= 0 or self.disk_limit_mb <= 0:
            raise ValueError("cost_rate, vcpus_per_function and disk_limit_mb must be positive")

    @property
    def function_timeout_ms(self):
        return int(round(self.function_timeout_s * 1000))

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown cluster model fields: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass
class FunctionInstance:
    seq: int
    payload: Any
    memory: int
    submit: int
    duration_ms: int
    failed: bool
    straggler: bool
    job: Optional[str] = None
    stage: Optional[int] = None
    task: Optional[int] = None
    start: Optional[int] = None
    end: Optional[int] = None
    outcome: Optional[str] = None  # ok | failed | timed_out | straggling
    on_complete: Optional[Callable] = field(default=None, repr=False)
    on_end: Optional[Callable] = field(default=None, repr=False)

    @property
    def produced_output(self):
        return self.outcome in ("ok", "straggling")


@dataclass(frozen=True)
class TraceEvent:
    time_ms: int
    event: str
    job: Any = ""
    stage: Any = ""
    task: Any = ""
    detail: str = ""

    def row(self):
        return tuple("" if v is None else v for v in
                     (self.time_ms, self.event, self.job, self.stage, self.task, self.detail))


@dataclass(frozen=True)
class BillingRecord:
    seq: int
    job: Optional[str]
    memory: int
    start: int
    end: int
    cost: float

    @property
    def gb_seconds(self):
        return self.memory / 1024 * (self.end - self.start) / 1000


class CostLedger:
    """Per-invocation billing at 1 ms granularity."""

    def __init__(self, cost_rate):
        self.cost_rate = cost_rate
        self.records = []

    def price(self, memory, billed_ms):
        return memory / 1024 * (billed_ms / 1000) * self.cost_rate

    def bill(self, inst):
        rec = BillingRecord(inst.seq, inst.job, inst.memory, inst.start, inst.end,
                            self.price(inst.memory, inst.end - inst.start))
        self.records.append(rec)
        return rec

    def total(self, job_id=None):
        return math.fsum(r.cost for r in self.records if job_id is None or r.job == job_id)

    def gb_seconds(self, job_id=None):
        return math.fsum(r.gb_seconds for r in self.records
                         if job_id is None or r.job == job_id)

    def cumulative(self, t, running=()):
        """Cost accrued up to time ``t``, prorated over each invocation's run."""
        parts = []
        for r in self.records:
            if r.start >= t:
                continue
            if r.end <= t:
                parts.append(r.cost)
            else:
                parts.append(self.price(r.memory, t - r.start))
        for inst in running:
            if inst.start is not None and inst.start < t:
                parts.append(self.price(inst.memory, min(t, inst.end) - inst.start))
        return math.fsum(parts)


class Simulator:
    """Single-threaded event loop over virtual time."""

    def __init__(self, model=None):
        self.model = model or ClusterModel()
        self.rng = random.Random(self.model.rng_seed)
        self.now = 0
        self._heap = []
        self._seq = itertools.count()
        self._inst_seq = itertools.count()
        self._queue = deque()
        self.active = 0      # spawning or running
        self.running = 0     # started and not yet ended
        self.max_running = 0
        self.max_active = 0
        self.instances = []
        self._in_flight = {}
        self.ledger = CostLedger(self.model.cost_rate)
        self.trace = []
        self.slot_listeners = []

    # -- event queue

    def schedule(self, at, fn, *args):
        if at < self.now:
            raise ValueError(f"cannot schedule in the past ({at} < {self.now})")
        heapq.heappush(self._heap, (int(at), next(self._seq), fn, args))

    def call_later(self, delay_ms, fn, *args):
        self.schedule(self.now + int(delay_ms), fn, *args)

    def record(self, event, job="", stage="", task="", detail=""):
        self.trace.append(TraceEvent(self.now, event, job, stage, task, str(detail)))

    def pending_events(self):
        return len(self._heap)

    def step(self):
        at, _, fn, args = heapq.heappop(self._heap)
        self.now = at
        fn(*args)

    def run_until(self, t):
        while self._heap and self._heap[0][0] <= t:
            self.step()
        if t > self.now:
            self.now = int(t)
        return self.trace

    def run_to_quiescence(self, max_time=None):
        while self._heap:
            if max_time is not None and self._heap[0][0] > max_time:
                break
            self.step()
        return self.trace

    # -- invocations

    @property
    def free_slots(self):
        return self.model.concurrency_limit - self.active

    @property
    def queued(self):
        return len(self._queue)

    def running_instances(self):
        return list(self._in_flight.values())

    def invoke(self, payload, memory, base_duration, *, job=None, stage=None, task=None,
               on_complete=None, on_end=None, disk_bytes=0):
        """Submit one function invocation of ``base_duration`` seconds."""
        if not base_duration > 0:
            raise ValueError("base_duration must be > 0")
        m = self.model
        # draw both variates on every call so the stream stays aligned
        fail_draw = self.rng.random()
        strag_draw = self.rng.random()
        failed = fail_draw < m.failure_prob or disk_bytes > m.disk_limit_mb * 1_000_000
        straggler = strag_draw < m.straggler_prob
        factor = m.straggler_factor if straggler else 1.0
        inst = FunctionInstance(
            seq=next(self._inst_seq), payload=payload, memory=memory, submit=self.now,
            duration_ms=max(1, math.ceil(base_duration * factor * 1000 - 1e-9)),
            failed=failed, straggler=straggler, job=job, stage=stage, task=task,
            on_complete=on_complete, on_end=on_end)
        self.instances.append(inst)
        self.record("invoke", job, stage, task, f"seq={inst.seq}")
        if self.active < m.concurrency_limit:
            self._admit(inst)
        else:
            self._queue.append(inst)
        return inst

    def _admit(self, inst):
        self.active += 1
        self.max_active = max(self.max_active, self.active)
        self.schedule(self.now + self.model.spawn_latency_ms, self._start, inst)

    def _start(self, inst):
        inst.start = self.now
        self.running += 1
        self.max_running = max(self.max_running, self.running)
        timeout = self.model.function_timeout_ms
        if inst.failed:
            inst.outcome, run_ms = "failed", timeout
        elif inst.duration_ms > timeout:
            inst.outcome, run_ms = "timed_out", timeout
        else:
            inst.outcome = "straggling" if inst.straggler else "ok"
            run_ms = inst.duration_ms
        inst.end = inst.start + run_ms
        self._in_flight[inst.seq] = inst
        self.record("start", inst.job, inst.stage, inst.task, f"seq={inst.seq}")
        self.schedule(inst.end, self._finish, inst)

    def _finish(self, inst):
        self.running -= 1
        self.active -= 1
        del self._in_flight[inst.seq]
        self.ledger.bill(inst)
        self.record("end", inst.job, inst.stage, inst.task,
                    f"seq={inst.seq} {inst.outcome} mem={inst.memory}")
        if inst.produced_output and inst.on_complete is not None:
            inst.on_complete(inst)
        if inst.on_end is not None:
            inst.on_end(inst)
        while self._queue and self.active < self.model.concurrency_limit:
            self._admit(self._queue.popleft())
        for fn in list(self.slot_listeners):
            fn()

    # -- reporting

    def cost(self, job_id=None):
        return self.ledger.total(job_id)

    def cumulative_cost(self, t):
        return self.ledger.cumulative(t, self._in_flight.values())

    def trace_rows(self):
        return [e.row() for e in self.trace]

    def trace_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        w.writerows(self.trace_rows())
        return buf.getvalue()

    def write_trace_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.trace_csv())


def running_profile(trace):
    """Step function ``[(time_ms, running_count)]`` reconstructed from a trace."""
    points = []
    count = 0
    for e in trace:
        if e.event == "start":
            count += 1
        elif e.event == "end":
            count -= 1
        else:
            continue
        if points and points[-1][0] == e.time_ms:
            points[-1] = (e.time_ms, count)
        else:
            points.append((e.time_ms, count))
    return points


def max_concurrency(trace):
    """Largest number of simultaneously running functions seen in a trace."""
    best = count = 0
    for e in trace:
        if e.event == "start":
            count += 1
            best = max(best, count)
        elif e.event == "end":
            count -= 1
    return best
