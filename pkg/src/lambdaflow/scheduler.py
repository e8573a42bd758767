"""Client-side ordering of ready invocations across jobs.

One policy applies to every active job:

``fifo``
    Jobs in submission order; within a job, payloads in creation order.
``round_robin``
    One payload per job per cycle; the cycle resumes after the last job served.
``priority``
    Highest priority class first; jobs of equal priority are served
    round-robin.  Pausing lower-priority jobs is driven by the orchestrator
    through :meth:`Scheduler.hold` and :meth:`Scheduler.release`.
"""

from __future__ import annotations

import bisect
import itertools
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Optional

from .errors import UnknownJob

POLICIES = ("fifo", "round_robin", "priority")


@dataclass
class ReadyTask:
    job_id: str
    stage: int
    task: int
    payload: Any
    seq: int
    enqueued_at: int = 0
    respawn: bool = False


@dataclass
class _JobQueue:
    job_id: str
    order: int
    priority: int
    ready: deque = field(default_factory=deque)
    held: bool = False


class Scheduler:
    def __init__(self, policy="fifo", starvation_bound_ms: Optional[int] = None):
        if policy not in POLICIES:
            raise ValueError(f"unknown scheduling policy {policy!r}; expected one of {POLICIES}")
        self.policy = policy
        self.starvation_bound_ms = starvation_bound_ms
        self._jobs = {}
        self._order = []          # job orders, sorted
        self._by_order = {}
        self._job_counter = itertools.count()
        self._seq = itertools.count()
        self._pending = set()
        self._rr_next = {}        # priority class -> next job order to serve

    # -- job membership

    def add_job(self, job_id, priority=0):
        if job_id in self._jobs:
            return
        q = _JobQueue(job_id, next(self._job_counter), priority)
        self._jobs[job_id] = q
        self._by_order[q.order] = q
        bisect.insort(self._order, q.order)

    def remove_job(self, job_id):
        q = self._jobs.pop(job_id, None)
        if q is None:
            return
        for t in q.ready:
            self._pending.discard((t.job_id, t.stage, t.task))
        del self._by_order[q.order]
        self._order.remove(q.order)

    def has_job(self, job_id):
        return job_id in self._jobs

    def priority_of(self, job_id):
        return self._jobs[job_id].priority

    def hold(self, job_id):
        self._get(job_id).held = True

    def release(self, job_id):
        self._get(job_id).held = False

    def is_held(self, job_id):
        return self._get(job_id).held

    def _get(self, job_id):
        try:
            return self._jobs[job_id]
        except KeyError:
            raise UnknownJob(job_id) from None

    # -- queueing

    def enqueue(self, job_id, stage, payloads, now=0, respawn=False):
        """Add ``[(task_id, payload), ...]`` for one stage of ``job_id``."""
        q = self._get(job_id)
        items = [ReadyTask(job_id, stage, task, payload, next(self._seq), now, respawn)
                 for task, payload in payloads]
        if respawn:
            q.ready.extendleft(reversed(items))
        else:
            q.ready.extend(items)
        for t in items:
            self._pending.add((job_id, stage, t.task))
        return len(items)

    def is_pending(self, job_id, stage, task):
        return (job_id, stage, task) in self._pending

    def ready_count(self, job_id=None, include_held=True):
        if job_id is not None:
            return len(self._get(job_id).ready)
        return sum(len(q.ready) for q in self._jobs.values() if include_held or not q.held)

    def dispatchable(self):
        return any(q.ready and not q.held for q in self._jobs.values())

    # -- dispatch

    def dispatch(self, budget, now=None):
        """Remove and return up to ``budget`` ready tasks in policy order."""
        out = []
        if budget <= 0:
            return out
        if self.policy == "fifo":
            self._dispatch_fifo(budget, now, out)
        else:
            classes = self._classes()
            for prio in classes:
                if len(out) >= budget:
                    break
                self._dispatch_rr(prio, budget, now, out)
        for t in out:
            self._pending.discard((t.job_id, t.stage, t.task))
        return out

    def _classes(self):
        if self.policy == "round_robin":
            return [None]
        return sorted({q.priority for q in self._jobs.values()}, reverse=True)

    def _members(self, prio):
        qs = [self._by_order[o] for o in self._order]
        if prio is not None:
            qs = [q for q in qs if q.priority == prio]
        return [q for q in qs if not q.held]

    def _take_aged(self, qs, budget, now, out):
        if self.starvation_bound_ms is None or now is None:
            return
        aged = []
        for q in qs:
            for t in q.ready:
                if now - t.enqueued_at >= self.starvation_bound_ms:
                    aged.append((t.enqueued_at, t.seq, q, t))
                else:
                    break
        for _, _, q, t in sorted(aged, key=lambda a: a[:2]):
            if len(out) >= budget:
                return
            q.ready.remove(t)
            out.append(t)

    def _dispatch_fifo(self, budget, now, out):
        qs = self._members(None)
        self._take_aged(qs, budget, now, out)
        for q in qs:
            while q.ready and len(out) < budget:
                out.append(q.ready.popleft())
            if len(out) >= budget:
                break

    def _dispatch_rr(self, prio, budget, now, out):
        qs = self._members(prio)
        if not qs:
            return
        self._take_aged(qs, budget, now, out)
        start_order = self._rr_next.get(prio, 0)
        orders = [q.order for q in qs]
        i = bisect.bisect_left(orders, start_order) % len(qs)
        idle = 0
        while len(out) < budget and idle < len(qs):
            q = qs[i]
            if q.ready:
                out.append(q.ready.popleft())
                idle = 0
                self._rr_next[prio] = q.order + 1
            else:
                idle += 1
            i = (i + 1) % len(qs)
