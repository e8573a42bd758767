"""Bursty workload on the serverless simulator against the VM autoscaling
baseline; writes the time series to ./bench-demo."""

import logging

from lambdaflow.workloads import RunConfig, bench

logging.disable(logging.WARNING)
cfg = RunConfig(workload=dict(kind="bursty", interval_s=60, duration_s=1200,
                              burst_size=100, burst_period_s=600))
r = bench(cfg, baseline_vm=True)
summ = r.summary()
print(f"jobs {summ['jobs']} done {summ['done']}")
print(f"serverless mean completion {summ['mean_completion_s']:.1f} s cost {summ['cost']:.4f}")
print(f"vm         mean completion {summ['vm_mean_completion_s']:.1f} s "
      f"cost {summ['vm_cost']:.4f}")
print("written to", r.write("bench-demo"))
