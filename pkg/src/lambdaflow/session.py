"""Wiring of simulator, store, log and orchestrator for one simulated run."""

from __future__ import annotations

from dataclasses import dataclass

from .goals import GoalSpec
from .orchestrator import Job, Orchestrator, final_outputs
from .simulator import ClusterModel, Simulator
from .store import ExecutionLog, ObjectStore


@dataclass
class Session:
    sim: Simulator
    store: ObjectStore
    log: ExecutionLog
    orch: Orchestrator

    def put_input(self, key, data):
        self.store.put(key, data)
        return key

    def submit(self, compiled, input_key, **job_fields):
        goal = GoalSpec.from_dict(job_fields.pop("goal", None))
        return self.orch.submit(Job(compiled, input_key, goal=goal, **job_fields))

    def run(self, max_time=None):
        self.sim.run_to_quiescence(max_time)
        return self

    def outputs(self, job_id):
        return final_outputs(self.store, job_id, self.orch.jobs[job_id].pipeline)


def make_session(model=None, *, store=None, log=None, **orch_kwargs):
    sim = Simulator(model or ClusterModel())
    if store is None:
        store = ObjectStore(lambda: sim.now)
    else:
        store.clock = lambda: sim.now
    log = log if log is not None else ExecutionLog()
    return Session(sim, store, log, Orchestrator(sim, store, log, **orch_kwargs))


def simulate(compiled, input_data, *, model=None, tables=None, seed=0,
             input_name="input", **orch_kwargs):
    """Run one job to quiescence; returns ``(session, job_id)``."""
    s = make_session(model, **orch_kwargs)
    for k, v in sorted((tables or {}).items()):
        s.store.put(k, v)
    key = s.put_input(f"inputs/{input_name}", input_data)
    job_id = s.submit(compiled, key, seed=seed)
    s.run()
    return s, job_id
