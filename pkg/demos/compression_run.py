"""Compile the compression pipeline, run one job on the simulator and
compare its outputs with the serial in-process run."""

from lambdaflow.apps import bed_records, compression_pipeline
from lambdaflow.orchestrator import run_local
from lambdaflow.session import simulate

compiled = compression_pipeline(split_size=50_000).compile()
data = bed_records(400_000, seed=1)

s, job_id = simulate(compiled, data, seed=1)
summary = s.orch.job_summary(job_id)
print("job      ", summary["job_id"], summary["state"])
print("makespan ", summary["makespan_ms"] / 1000, "s")
print("tasks    ", summary["tasks"])
print("cost     ", f"{summary['cost']:.6f}")
print("peak fns ", s.sim.max_running)

local = run_local(compiled, data, seed=1, job_id=job_id)
print("outputs match serial run:", s.outputs(job_id) == local)
