"""VM autoscaling baseline for comparison with the serverless model.

A pool of identical VMs runs whole jobs.  Every ``evaluation_period_s`` the
autoscaler looks at CPU utilisation of booted VMs: above the upper threshold
it boots ``scale_step`` more VMs (usable after ``boot_latency_s``), below the
lower threshold it retires idle VMs down to ``min_vms``.  Jobs wait in a FIFO
queue until a booted VM has enough free vCPUs.
"""

from __future__ import annotations

import dataclasses
import heapq
import itertools
import math
from collections import deque
from dataclasses import dataclass, field

DEFAULT_VM_PRICE_PER_S = 0.1856 / 3600


@dataclass
class VmBaselineModel:
    boot_latency_s: float = 30.0
    scale_up_threshold: float = 0.70
    scale_down_threshold: float = 0.30
    evaluation_period_s: float = 300.0
    vcpus_per_vm: int = 4
    job_vcpus: int = 4
    min_vms: int = 1
    max_vms: int = 1000
    initial_vms: int = 1
    scale_step: int = 1
    price_per_vm_s: float = DEFAULT_VM_PRICE_PER_S

    def __post_init__(self):
        if not 0 < self.scale_down_threshold < self.scale_up_threshold < 1:
            raise ValueError("thresholds must satisfy 0 < down < up < 1")
        if self.boot_latency_s < 0 or self.evaluation_period_s <= 0:
            raise ValueError("boot_latency_s must be >= 0 and evaluation_period_s > 0")
        if self.vcpus_per_vm <= 0 or not 0 < self.job_vcpus <= self.vcpus_per_vm:
            raise ValueError("job_vcpus must lie in (0, vcpus_per_vm]")
        if not 1 <= self.min_vms <= self.max_vms or self.scale_step < 1:
            raise ValueError("need 1 <= min_vms <= max_vms and scale_step >= 1")
        if not self.min_vms <= self.initial_vms <= self.max_vms:
            raise ValueError("initial_vms must lie in [min_vms, max_vms]")

    @classmethod
    def agile(cls, **kw):
        """The fast-reacting policy variant (10 s evaluation period)."""
        return cls(evaluation_period_s=10.0, **kw)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass
class _Vm:
    vm_id: int
    ready_at: float
    free: int
    started_at: float
    stopped_at: float = None
    jobs: int = 0

    def ready(self, now):
        return self.stopped_at is None and self.ready_at <= now


@dataclass
class VmSample:
    time_s: float
    vms: int
    booting: int
    vcpus_in_use: int
    running_jobs: int
    pending_jobs: int


@dataclass
class VmRunResult:
    arrivals: list
    starts: list
    completions: list
    samples: list = field(default_factory=list)
    vms: list = field(default_factory=list)
    model: VmBaselineModel = None

    @property
    def completion_times(self):
        return [c - a for a, c in zip(self.arrivals, self.completions)]

    @property
    def mean_completion_s(self):
        ct = self.completion_times
        return math.fsum(ct) / len(ct) if ct else 0.0

    @property
    def max_queue_depth(self):
        return max((s.pending_jobs for s in self.samples), default=0)

    @property
    def final_vm_count(self):
        return self.samples[-1].vms if self.samples else 0

    def vm_seconds(self, t=None):
        total = 0.0
        for vm in self.vms:
            end = vm.stopped_at if vm.stopped_at is not None else self.samples[-1].time_s
            if t is not None:
                end = min(end, t)
            total += max(0.0, end - vm.started_at)
        return total

    def cost(self, t=None):
        return self.vm_seconds(t) * self.model.price_per_vm_s

    def state_at(self, t):
        """Last sample at or before ``t``."""
        best = None
        for s in self.samples:
            if s.time_s > t:
                break
            best = s
        return best


def vm_baseline_run(arrivals_s, vcpu_seconds, model=None):
    """Simulate the VM pool; job ``i`` arrives at ``arrivals_s[i]`` and needs
    ``vcpu_seconds[i]`` of CPU, running on ``model.job_vcpus`` vCPUs."""
    model = model or VmBaselineModel()
    if len(arrivals_s) != len(vcpu_seconds):
        raise ValueError("arrivals and vcpu_seconds differ in length")
    n = len(arrivals_s)
    heap = []
    seq = itertools.count()
    vm_ids = itertools.count()
    vms = []
    pending = deque()
    starts = [None] * n
    completions = [None] * n
    samples = []
    state = {"running": 0, "busy": 0, "done": 0}

    def push(t, kind, arg=None):
        heapq.heappush(heap, (t, next(seq), kind, arg))

    def boot(now, latency):
        vm = _Vm(next(vm_ids), now + latency, model.vcpus_per_vm, now)
        vms.append(vm)
        if latency > 0:
            push(vm.ready_at, "ready", vm.vm_id)
        return vm

    def live():
        return [v for v in vms if v.stopped_at is None]

    def place(now):
        while pending:
            vm = next((v for v in live() if v.ready(now) and v.free >= model.job_vcpus), None)
            if vm is None:
                return
            j = pending.popleft()
            vm.free -= model.job_vcpus
            vm.jobs += 1
            state["running"] += 1
            state["busy"] += model.job_vcpus
            starts[j] = now
            push(now + vcpu_seconds[j] / model.job_vcpus, "end", (j, vm.vm_id))

    def sample(now):
        lv = live()
        booting = sum(1 for v in lv if not v.ready(now))
        row = VmSample(now, len(lv) - booting, booting, state["busy"],
                       state["running"], len(pending))
        if samples and samples[-1].time_s == now:
            samples[-1] = row
        else:
            samples.append(row)

    for _ in range(model.initial_vms):
        boot(0.0, 0.0)
    for j, t in enumerate(arrivals_s):
        push(float(t), "arrive", j)
    push(model.evaluation_period_s, "evaluate")
    sample(0.0)

    while heap:
        now, _, kind, arg = heapq.heappop(heap)
        if kind == "arrive":
            pending.append(arg)
            place(now)
        elif kind == "end":
            j, vm_id = arg
            vm = vms[vm_id]
            vm.free += model.job_vcpus
            vm.jobs -= 1
            state["running"] -= 1
            state["busy"] -= model.job_vcpus
            state["done"] += 1
            completions[j] = now
            place(now)
        elif kind == "ready":
            place(now)
        elif kind == "evaluate":
            lv = live()
            ready = [v for v in lv if v.ready(now)]
            capacity = sum(model.vcpus_per_vm for v in ready)
            util = state["busy"] / capacity if capacity else 0.0
            if util > model.scale_up_threshold:
                for _ in range(min(model.scale_step, model.max_vms - len(lv))):
                    boot(now, model.boot_latency_s)
            elif util < model.scale_down_threshold:
                idle = [v for v in ready if v.jobs == 0]
                for v in idle[::-1][:min(model.scale_step, len(lv) - model.min_vms)]:
                    v.stopped_at = now
            settled = (state["done"] == n and len(live()) == model.min_vms
                       and all(v.ready(now) for v in live()))
            if not settled:
                push(now + model.evaluation_period_s, "evaluate")
        sample(now)

    return VmRunResult(list(arrivals_s), starts, completions, samples, vms, model)
