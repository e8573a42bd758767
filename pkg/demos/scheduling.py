"""Five identical jobs on one function slot under FIFO and round robin,
then a high-priority job arriving on a busy platform."""

import logging

from lambdaflow.experiments import contention_run, priority_run

logging.disable(logging.WARNING)
for policy in ("fifo", "round_robin"):
    r = contention_run(policy)
    print(f"{policy:11s} completion order {r.completion_order} "
          f"spread {r.spread_ms / 1000:.1f} s")

alone, loaded = priority_run()
print("high-priority makespan alone  ", alone.orch.jobs["high"].makespan_ms, "ms")
print("high-priority makespan loaded ", loaded.orch.jobs["high"].makespan_ms, "ms")
for e in loaded.log.entries():
    if e.event in ("paused", "resumed"):
        print(f"  {e.at:6d} ms {e.job_id} {e.event}")
