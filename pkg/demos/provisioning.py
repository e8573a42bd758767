"""Split-size provisioning: a stream of jobs through canary runs, table
completion and online updates, then one exhaustive comparison."""

from lambdaflow.experiments import optimality_trial, synthetic_stream

stream = synthetic_stream(seed=0, n_jobs=20)
for i, ob in enumerate(stream.observations):
    print(f"job {i:2d} row {ob.row:12s} column {ob.column:>10s} "
          f"predicted {ob.predicted:8.1f} s measured {ob.measured:8.1f} s "
          f"error {ob.relative_error:6.1%}")
print(f"median error: first half {stream.first:.1%}, second half {stream.last:.1%}")

t = optimality_trial(seed=0)
print(f"chosen split {t.chosen} ({t.chosen_runtime:.1f} s), "
      f"best split {t.optimum} ({t.optimum_runtime:.1f} s), ratio {t.ratio:.2f}")
