"""Twenty jobs on a platform where 10% of invocations fail, with and
without the straggler monitor."""

import logging

from lambdaflow.apps import bed_records, compression_pipeline
from lambdaflow.session import make_session
from lambdaflow.simulator import ClusterModel

logging.disable(logging.WARNING)
compiled = compression_pipeline(timeout=60).compile()

for ft in (True, False):
    s = make_session(ClusterModel(failure_prob=0.10, rng_seed=4), fault_tolerance=ft)
    s.put_input("inputs/methyl.bed", bed_records(150_000, 4))
    ids = [s.submit(compiled, "inputs/methyl.bed", seed=4) for _ in range(20)]
    s.run()
    s.orch.finalize()
    done = [j for j in ids if s.orch.jobs[j].state == "done"]
    respawns = sum(s.orch.respawns(j) for j in ids)
    worst = max((s.orch.jobs[j].makespan_ms for j in done), default=0) / 1000
    print(f"fault tolerance {'on ' if ft else 'off'}: {len(done)}/20 done, "
          f"{respawns} respawns, slowest {worst:.1f} s")
