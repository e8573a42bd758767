"""Control loop driving compiled pipelines on the simulator.

Stage ``i + 1`` is planned once every task of stage ``i`` has written its
output (a barrier over distinct task ordinals).  Ready payloads go to the
scheduler and are dispatched while the platform has free slots.  A periodic
monitor re-invokes tasks whose completion has not shown up within the stage
timeout.  Every decision is written to the execution log first, so a fresh
orchestrator can rebuild its state from the log alone.
"""

from __future__ import annotations

import itertools
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

from .errors import BadState, InputMissing, UnknownJob
from .goals import GoalSpec
from .pipeline import canonical_json, load
from .runtime import DurationModel, FunctionRuntime, plan_stage, stage_outputs
from .scheduler import Scheduler
from .store import LogEntry, ObjectStore, parse_key, task_prefix

log = logging.getLogger(__name__)

JOB_STATES = ("queued", "running", "paused", "done", "failed")
TERMINAL = frozenset({"done", "failed"})


@dataclass
class Job:
    pipeline: object
    input_key: str
    goal: GoalSpec = field(default_factory=GoalSpec)
    priority: int = 0
    pause_at: Optional[int] = None
    job_id: Optional[str] = None
    seed: int = 0
    provision: bool = True
    state: str = "queued"
    submitted_at: Optional[int] = None
    finished_at: Optional[int] = None

    @property
    def makespan_ms(self):
        if self.finished_at is None or self.submitted_at is None:
            return None
        return self.finished_at - self.submitted_at


@dataclass
class TaskRecord:
    job_id: str
    stage: int
    task: int
    payload: dict
    attempts: int = 0
    invoked_at: Optional[int] = None
    deadline_for_log: Optional[int] = None
    completed: bool = False
    respawn_queued: bool = False


def _timeout_ms(payload):
    return int(round(payload["timeout_s"] * 1000))


class Orchestrator:
    def __init__(self, sim, store, log_, *, runtime=None, scheduler="fifo",
                 fault_tolerance=True, monitor_interval_ms=1000, notification_latency_ms=0,
                 max_attempts=8, durations=None, provisioner=None, kernels=None,
                 recover=True):
        self.sim = sim
        self.store = store
        self.log = log_
        self.kernels = kernels
        self.runtime = runtime or FunctionRuntime(store, kernels)
        self.scheduler = scheduler if isinstance(scheduler, Scheduler) else Scheduler(scheduler)
        self.fault_tolerance = fault_tolerance
        self.monitor_interval_ms = monitor_interval_ms
        self.notification_latency_ms = notification_latency_ms
        self.max_attempts = max_attempts
        self.durations = durations or DurationModel()
        self.provisioner = provisioner
        self.jobs = {}
        self.tasks = {}
        self._plans = {}
        self._totals = {}
        self._done = Counter()
        self._advanced = set()
        self._outstanding = set()
        self._preempted_by = {}
        self._tick_scheduled = False
        self._ids = itertools.count()
        self.alive = True
        self._unsubscribe = store.subscribe(self._notify)
        sim.slot_listeners.append(self._pump)
        if recover and len(self.log):
            self.recover()

    # -- plumbing

    @property
    def now(self):
        return self.sim.now

    def _append(self, job_id, stage, task, event, payload=None):
        self.log.append(LogEntry(job_id, stage, task, event, self.now, payload or {}))
        if stage is None:
            self.sim.record(event, job_id)

    def _notify(self, key):
        if self.alive:
            self.sim.schedule(self.now + self.notification_latency_ms,
                              self.on_object_written, key)

    def crash(self):
        """Stop reacting to anything; used to model a controller failure."""
        self.alive = False
        self._unsubscribe()
        if self._pump in self.sim.slot_listeners:
            self.sim.slot_listeners.remove(self._pump)

    def _job(self, job_id):
        try:
            return self.jobs[job_id]
        except KeyError:
            raise UnknownJob(job_id) from None

    def _new_id(self):
        while True:
            job_id = f"job-{next(self._ids):04d}"
            if job_id not in self.jobs:
                return job_id

    # -- submission

    def submit(self, job):
        if not self.store.exists(job.input_key):
            raise InputMissing(job.input_key)
        if job.job_id is None:
            job.job_id = self._new_id()
        elif job.job_id in self.jobs:
            raise ValueError(f"duplicate job id {job.job_id!r}")
        if self.provisioner is not None and job.provision:
            job.pipeline = self.provisioner.size_job(job, self.store)
        job.state = "queued"
        job.submitted_at = self.now
        self.jobs[job.job_id] = job
        self._append(job.job_id, None, None, "submitted", {
            "pipeline": job.pipeline.to_document(),
            "input_key": job.input_key,
            "goal": job.goal.to_dict(),
            "priority": job.priority,
            "pause_at": job.pause_at,
            "seed": job.seed,
        })
        self.scheduler.add_job(job.job_id, job.priority)
        self.sim.schedule(self.now, self._start, job.job_id)
        return job.job_id

    def _start(self, job_id):
        if not self.alive:
            return
        job = self.jobs[job_id]
        if job.state != "queued":
            return
        job.state = "running"
        self._maybe_preempt(job)
        self._trigger(job, 0, [job.input_key])
        self._ensure_ticking()

    # -- triggering

    def _held(self, job, stage_id):
        if stage_id >= len(job.pipeline.stages):
            return False
        if job.state == "paused":
            return True
        return job.pause_at is not None and stage_id > job.pause_at

    def _trigger(self, job, stage_id, inputs):
        if job.state in TERMINAL:
            return
        if stage_id == len(job.pipeline.stages):
            self._finish(job)
            return
        if self._held(job, stage_id):
            if job.state != "paused":
                self._enter_pause(job, {"at_stage": job.pause_at})
            return
        key = (job.job_id, stage_id)
        plan = self._plans.get(key)
        if plan is None:
            plan = plan_stage(job.pipeline, stage_id, inputs, self.store, job.job_id,
                              seed=job.seed, kernels=self.kernels)
            self._plans[key] = plan
            self._totals[key] = len(plan)
        fresh = []
        for p in plan:
            tk = (job.job_id, stage_id, p["task"])
            rec = self.tasks.get(tk)
            if rec is None:
                rec = self.tasks[tk] = TaskRecord(job.job_id, stage_id, p["task"], p)
            if rec.completed or rec.invoked_at is not None or self.scheduler.is_pending(*tk):
                continue
            fresh.append((p["task"], p))
        if fresh:
            self.scheduler.enqueue(job.job_id, stage_id, fresh, self.now)
        self._check_barrier(job, stage_id)
        self._pump()

    def _check_barrier(self, job, stage_id):
        key = (job.job_id, stage_id)
        total = self._totals.get(key)
        if key in self._advanced:
            # already past this barrier; a resume walks on to the held one
            self._check_barrier(job, stage_id + 1)
            return
        if total is None or self._done[key] < total:
            return
        if not self._held(job, stage_id + 1):
            self._advanced.add(key)
        self._trigger(job, stage_id + 1, stage_outputs(self.store, job.job_id, stage_id))

    def on_object_written(self, key):
        """Handle a store notification; unknown or repeated keys are ignored."""
        if not self.alive:
            return
        k = parse_key(key)
        if k is None or k.stage == "input":
            return
        job = self.jobs.get(k.job)
        if job is None or job.state in TERMINAL:
            return
        tk = (k.job, k.stage, k.ordinal)
        if self.log.has(*tk, "completed") or not self.log.has(*tk, "invoked"):
            return
        self._mark_completed(tk, k.total)
        self._check_barrier(job, k.stage)
        self._pump()

    def _mark_completed(self, tk, total):
        self._append(*tk, "completed")
        rec = self.tasks.get(tk)
        if rec is not None:
            rec.completed = True
        self._outstanding.discard(tk)
        self._done[tk[:2]] += 1
        self._totals.setdefault(tk[:2], total)

    # -- dispatch

    def _pump(self):
        if not self.alive:
            return
        budget = self.sim.free_slots
        if budget <= 0:
            return
        for rt in self.scheduler.dispatch(budget, self.now):
            self._invoke(rt)

    def _invoke(self, rt):
        tk = (rt.job_id, rt.stage, rt.task)
        rec = self.tasks[tk]
        job = self.jobs[rt.job_id]
        rec.respawn_queued = False
        if rec.completed or job.state in TERMINAL:
            return
        p = rec.payload
        if rec.attempts == 0:
            self._append(*tk, "invoked", p)
        else:
            self._append(*tk, "respawned", {"attempt": rec.attempts + 1})
        rec.attempts += 1
        rec.invoked_at = self.now
        rec.deadline_for_log = self.now + _timeout_ms(p)
        self._outstanding.add(tk)
        self.sim.invoke(p, p["memory"], self.durations.duration(p), job=rt.job_id,
                        stage=rt.stage, task=rt.task,
                        on_complete=self.runtime.on_function_complete)

    # -- monitoring

    def _active(self):
        return bool(self._outstanding) or any(
            j.state in ("queued", "running") for j in self.jobs.values())

    def _ensure_ticking(self):
        if self.fault_tolerance and self.alive and not self._tick_scheduled and self._active():
            self._tick_scheduled = True
            self.sim.schedule(self.now + self.monitor_interval_ms, self.monitor_tick)

    def monitor_tick(self):
        """Respawn every invoked task whose completion is overdue."""
        if not self.alive:
            return []
        self._tick_scheduled = False
        respawned = []
        if not self.fault_tolerance:
            return respawned
        for tk in sorted(self._outstanding):
            rec = self.tasks[tk]
            job = self.jobs[tk[0]]
            if rec.completed or job.state in TERMINAL:
                self._outstanding.discard(tk)
                continue
            if rec.respawn_queued or not self.now > rec.deadline_for_log:
                continue
            if rec.attempts >= self.max_attempts:
                self._fail(job, f"task {tk} exhausted {self.max_attempts} attempts")
                continue
            rec.respawn_queued = True
            self.scheduler.enqueue(tk[0], tk[1], [(tk[2], rec.payload)], self.now,
                                   respawn=True)
            respawned.append(tk)
        self._pump()
        self._ensure_ticking()
        return respawned

    # -- job lifecycle

    def _finish(self, job):
        job.state = "done"
        job.finished_at = self.now
        self._append(job.job_id, None, None, "done", {"makespan_ms": job.makespan_ms})
        self._retire(job)
        if self.provisioner is not None and job.provision:
            self.provisioner.observe(job, job.makespan_ms / 1000)

    def _fail(self, job, reason):
        log.warning("job %s failed: %s", job.job_id, reason)
        job.state = "failed"
        job.finished_at = self.now
        self._append(job.job_id, None, None, "failed", {"reason": reason})
        self._retire(job)

    def _retire(self, job):
        self.scheduler.remove_job(job.job_id)
        self._outstanding = {tk for tk in self._outstanding if tk[0] != job.job_id}
        for low_id, highs in list(self._preempted_by.items()):
            highs.discard(job.job_id)
            if not highs:
                del self._preempted_by[low_id]
                low = self.jobs[low_id]
                if low.state == "paused":
                    self._resume(low, {"reason": "priority"})

    def finalize(self):
        """Mark every unfinished job failed; call once the simulation is quiescent."""
        for job in self.jobs.values():
            if job.state not in TERMINAL:
                self._fail(job, "no progress possible")

    # -- pause / resume

    def _enter_pause(self, job, info):
        job.state = "paused"
        self._append(job.job_id, None, None, "paused", info)
        self.scheduler.hold(job.job_id)

    def pause(self, job_id, at_stage=None):
        """Stop dispatching ``job_id`` beyond ``at_stage`` (immediately if None)."""
        job = self._job(job_id)
        if job.state not in ("queued", "running"):
            raise BadState(f"cannot pause job {job_id} in state {job.state}")
        if at_stage is None:
            self._enter_pause(job, {"at_stage": None})
            return
        job.pause_at = at_stage
        if any(k[0] == job_id and k[1] > at_stage for k in self._plans):
            self._enter_pause(job, {"at_stage": at_stage})

    def resume(self, job_id):
        job = self._job(job_id)
        if job.state != "paused":
            raise BadState(f"cannot resume job {job_id} in state {job.state}")
        self._preempted_by.pop(job_id, None)
        self._resume(job, {"reason": "user"})

    def _resume(self, job, info):
        job.pause_at = None
        job.state = "running"
        self._append(job.job_id, None, None, "resumed", info)
        self.scheduler.release(job.job_id)
        self._trigger(job, 0, [job.input_key])
        self._ensure_ticking()

    def _maybe_preempt(self, job):
        if self.scheduler.policy != "priority":
            return
        if self.sim.free_slots > 0 and not self.sim.queued:
            return
        for low in list(self.jobs.values()):
            if low.state == "running" and low.priority < job.priority:
                self._preempted_by.setdefault(low.job_id, set()).add(job.job_id)
                self._enter_pause(low, {"reason": "priority", "by": job.job_id})

    # -- hot standby

    def recover(self):
        """Rebuild jobs and task records from the log, then replay live jobs."""
        for job_id in self.log.jobs():
            entries = self.log.query(job_id)
            sub = next((e for e in entries if e.event == "submitted"), None)
            if sub is None:
                continue
            p = sub.payload
            job = Job(load(canonical_json(p["pipeline"])), p["input_key"],
                      GoalSpec.from_dict(p["goal"]), p["priority"], p["pause_at"],
                      job_id, p.get("seed", 0), provision=False,
                      state="running", submitted_at=sub.at)
            for e in entries:
                tk = (job_id, e.stage_id, e.task_id)
                if e.event == "invoked":
                    rec = self.tasks[tk] = TaskRecord(job_id, e.stage_id, e.task_id, e.payload)
                    rec.attempts = 1
                    rec.invoked_at = e.at
                    rec.deadline_for_log = e.at + _timeout_ms(e.payload)
                    self._totals[tk[:2]] = e.payload["total"]
                elif e.event == "respawned":
                    rec = self.tasks[tk]
                    rec.attempts += 1
                    rec.invoked_at = e.at
                    rec.deadline_for_log = e.at + _timeout_ms(rec.payload)
                elif e.event == "completed":
                    self.tasks[tk].completed = True
                    self._done[tk[:2]] += 1
                elif e.event == "paused":
                    job.state = "paused"
                    if e.payload.get("reason") == "priority":
                        self._preempted_by.setdefault(job_id, set()).add(e.payload["by"])
                    else:
                        job.pause_at = e.payload.get("at_stage")
                elif e.event == "resumed":
                    job.state = "running"
                    job.pause_at = None
                    self._preempted_by.pop(job_id, None)
                elif e.event in TERMINAL:
                    job.state = e.event
                    job.finished_at = e.at
            self.jobs[job_id] = job
            if job.state not in TERMINAL:
                self.scheduler.add_job(job_id, job.priority)
                if job.state == "paused":
                    self.scheduler.hold(job_id)
        n = len(self.jobs)
        self._ids = itertools.count(n)

        # outputs written while no controller was listening
        for tk, rec in sorted(self.tasks.items()):
            if rec.completed or self.jobs[tk[0]].state in TERMINAL:
                continue
            if self.store.list(task_prefix(*tk, rec.payload["total"])):
                self._mark_completed(tk, rec.payload["total"])
            else:
                self._outstanding.add(tk)
        for low_id, highs in list(self._preempted_by.items()):
            if all(self.jobs[h].state in TERMINAL for h in highs if h in self.jobs):
                del self._preempted_by[low_id]
                self.sim.schedule(self.now, self._resume_after_recovery, low_id)
        for job_id, job in self.jobs.items():
            if job.state == "running":
                self.sim.schedule(self.now, self._replay, job_id)
        self._ensure_ticking()

    def _replay(self, job_id):
        if self.alive and self.jobs[job_id].state == "running":
            job = self.jobs[job_id]
            self._trigger(job, 0, [job.input_key])

    def _resume_after_recovery(self, job_id):
        job = self.jobs[job_id]
        if self.alive and job.state == "paused":
            self._resume(job, {"reason": "priority"})

    # -- reporting

    def respawns(self, job_id):
        return sum(1 for e in self.log.query(job_id) if e.event == "respawned")

    def job_summary(self, job_id):
        job = self._job(job_id)
        return {
            "job_id": job_id,
            "state": job.state,
            "makespan_ms": job.makespan_ms,
            "tasks": sum(1 for tk in self.tasks if tk[0] == job_id),
            "respawns": self.respawns(job_id),
            "cost": self.sim.cost(job_id),
            "seed": job.seed,
        }


def final_outputs(store, job_id, compiled):
    """Final-stage objects keyed relative to the job prefix."""
    last = len(compiled.stages) - 1
    return {k[len(job_id) + 1:]: store.get(k) for k in stage_outputs(store, job_id, last)}


def run_local(compiled, input_data, *, tables=None, kernels=None, seed=0,
              job_id="local", input_name="input"):
    """Run every stage serially in-process; returns the final outputs."""
    store = ObjectStore()
    for k, v in sorted((tables or {}).items()):
        store.put(k, v)
    input_key = f"{job_id}/input/0-1/{input_name}"
    store.put(input_key, input_data)
    runtime = FunctionRuntime(store, kernels)
    inputs = [input_key]
    for sid in range(len(compiled.stages)):
        for p in plan_stage(compiled, sid, inputs, store, job_id, seed=seed, kernels=kernels):
            runtime.execute(p)
        inputs = stage_outputs(store, job_id, sid)
    return final_outputs(store, job_id, compiled)
