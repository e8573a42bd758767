import random
import statistics

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lambdaflow import errors
from lambdaflow.goals import GoalSpec
from lambdaflow.provisioner import (
    MB, Provisioner, ProfileTable, choose, column_grid, column_id, complete_table, factorize,
    SplitJobModel, max_concurrency_split, plan_canary, scale_canary, snap_prefix, split_grid,
)
from lambdaflow.simulator import ClusterModel


def test_canary_plan_for_large_input():
    p = plan_canary(500 * MB)
    assert p.canary_bytes == 20 * MB
    assert p.configs == ((MB,), (500_000,))
    assert p.columns == ["1000000", "500000"]


def test_canary_plan_for_small_input_uses_all_of_it():
    p = plan_canary(5 * MB)
    assert p.canary_bytes == 5 * MB
    assert len(p.configs) == 2 and (MB,) in p.configs


def test_canary_plan_multi_phase():
    p = plan_canary(500 * MB, n_phases=3)
    assert len(p.configs) == 4
    assert all(len(c) == 3 for c in p.configs)
    assert (500_000, MB, MB) in p.configs and (MB, 500_000, 500_000) in p.configs


def test_grids():
    assert max_concurrency_split(4_000 * MB, 1000) == 4 * MB
    sizes = split_grid(4_000 * MB, 1000)
    assert sizes[0] == MB and 4 * MB in sizes and len(sizes) <= 12
    grid = column_grid(500 * MB, 1000, n_phases=2)
    assert len(grid) <= 12 and set(plan_canary(500 * MB, 2).configs) <= set(grid)


def test_canary_scaling_by_waves():
    assert scale_canary(10.0, 20 * MB, 100 * MB, (MB,), 10) == 50.0
    assert scale_canary(10.0, 20 * MB, 100 * MB, (MB,), 1000) == 10.0


def test_snap_prefix_ends_on_item_boundary():
    blob = b"aaaa\nbbbb\ncccc\n"
    assert snap_prefix(blob, 6) == b"aaaa\nbbbb\n"
    assert snap_prefix(blob, 5) == b"aaaa\n"
    assert snap_prefix(blob, 100) == blob


def test_record_predict_and_overwrite():
    t = ProfileTable()
    t.record("r", "1000000", 12.5)
    assert t.predict("r", "1000000") == 12.5
    t.record("r", "1000000", 9.0)
    assert t.predict("r", "1000000") == 9.0
    with pytest.raises(ValueError):
        t.record("r", "1000000", 0)


def _rank_one(n_rows=10, n_cols=8, seed=0):
    rng = random.Random(seed)
    a = [rng.uniform(1, 10) for _ in range(n_rows)]
    b = [rng.uniform(1, 10) for _ in range(n_cols)]
    return {(f"r{i}", column_id((MB * 2 ** j,))): a[i] * b[j]
            for i in range(n_rows) for j in range(n_cols)}


def test_completion_recovers_hidden_rank_one_cells():
    truth = _rank_one()
    rng = random.Random(1)
    keys = sorted(truth)
    hidden = set(rng.sample(keys, len(keys) // 5))
    t = ProfileTable()
    for k in keys:
        if k not in hidden:
            t.record(*k, truth[k])
    predicted = complete_table(t)
    assert set(predicted) == hidden
    errors_ = [abs(predicted[k] - truth[k]) / truth[k] for k in hidden]
    assert statistics.median(errors_) <= 0.10


def test_more_recorded_jobs_predict_held_out_cells_better():
    truth = _rank_one(n_rows=21, n_cols=8, seed=5)
    cols = sorted({c for _, c in truth})
    target = "r20"
    held = [(target, c) for c in cols[1:-1]]

    def error(n_rows):
        t = ProfileTable()
        for (r, c), v in truth.items():
            if r == target and (r, c) not in held or int(r[1:]) < n_rows:
                t.record(r, c, v)
        pred = complete_table(t)
        return statistics.median(abs(pred[k] - truth[k]) / truth[k] for k in held)
    assert error(20) < error(2)


def test_fully_observed_table_is_fitted_closely():
    truth = _rank_one(4, 6, seed=3)
    fit = factorize(truth)
    for k, v in truth.items():
        assert abs(fit(*k) - v) <= 0.01 * v


def test_empty_table_is_underdetermined():
    with pytest.raises(errors.Underdetermined):
        complete_table(ProfileTable())
    with pytest.raises(errors.Underdetermined):
        factorize({})


def _table(runtimes, row="r"):
    t = ProfileTable()
    for size, rt in runtimes.items():
        t.record(row, column_id((size,)), rt)
    return t


def test_choose_under_deadline_and_fallback():
    t = _table({MB: 100.0, 2 * MB: 60.0, 4 * MB: 40.0})
    c = choose
    best = c(t, "r", GoalSpec.best_effort(), 100 * MB)
    assert best.sizes == (4 * MB,)
    dl = c(t, "r", GoalSpec.deadline(70), 100 * MB)
    assert dl.predicted_runtime <= 70 and dl.feasible
    # among feasible columns the cheaper one wins
    assert dl.predicted_cost == min(dl.candidates[k][1] for k in dl.candidates
                                    if dl.candidates[k][0] <= 70)
    with pytest.raises(errors.Infeasible):
        c(t, "r", GoalSpec.deadline(1), 100 * MB, strict=True)
    fb = c(t, "r", GoalSpec.deadline(1), 100 * MB)
    assert not fb.feasible and fb.sizes == best.sizes
    with pytest.raises(errors.Underdetermined):
        c(t, "other-row", GoalSpec.best_effort(), 100 * MB)


def test_loose_deadline_picks_cheapest_column():
    t = _table({MB: 100.0, 2 * MB: 60.0, 4 * MB: 40.0})
    ch = choose(t, "r", GoalSpec.deadline(1_000), 100 * MB)
    assert ch.predicted_cost == min(cost for _, cost in ch.candidates.values())


def test_best_effort_matches_exhaustive_when_concurrency_always_helps():
    model = SplitJobModel(64 * MB, fixed_s=0.5, per_mb_s=2.0, jitter=0.0,
                          cluster=ClusterModel(concurrency_limit=16))
    runs = model.exhaustive()
    t = ProfileTable()
    for size, run in runs.items():
        t.record("job", column_id((size,)), run.runtime_s)
    best = min(runs, key=lambda s: runs[s].runtime_s)
    assert best == max_concurrency_split(64 * MB, 16)
    ch = choose(t, "job", GoalSpec.best_effort(), 64 * MB, max_lambdas=16)
    assert ch.sizes == (best,)


def test_choose_handles_non_monotone_runtimes():
    t = _table({MB: 50.0, 2 * MB: 20.0, 4 * MB: 35.0, 8 * MB: 80.0})
    assert choose(t, "r", GoalSpec.best_effort(), 50 * MB).sizes == (2 * MB,)


def test_observation_overwrites_only_on_deviation(tmp_path):
    path = tmp_path / "table.csv"
    t = _table({MB: 10.0, 2 * MB: 20.0})
    prov = Provisioner(t, table_path=path)
    ch = choose(t, "r", GoalSpec.best_effort(), 50 * MB)
    prov.observe_choice(ch, 11.0)            # within 20% of a full measurement
    assert t.predict("r", ch.column) == 10.0
    prov.observe_choice(ch, 15.0)
    assert t.predict("r", ch.column) == 15.0
    assert prov.history[-1].relative_error == pytest.approx(5 / 15)
    loaded = ProfileTable.load_csv(path)
    assert loaded.observed_cells() == t.observed_cells()
    assert ProfileTable.load_csv(tmp_path / "missing.csv").cells == {}


def test_canary_cells_are_replaced_by_full_runs():
    prov = Provisioner()
    runner = lambda sizes, n: n / sizes[0]          # noqa: E731
    ch = prov.provision("app", 100 * MB, 1, GoalSpec.best_effort(), runner)
    assert prov.table.cell(ch.row, ch.column).source == "canary"
    prov.observe_choice(ch, ch.predicted_runtime)
    assert prov.table.cell(ch.row, ch.column).source == "full"


@settings(max_examples=30, deadline=None)
@given(st.dictionaries(st.sampled_from([MB * 2 ** k for k in range(6)]),
                       st.floats(1, 1000), min_size=1),
       st.floats(1, 1000))
def test_deadline_choice_meets_deadline_when_possible(runtimes, deadline):
    t = _table(runtimes)
    ch = choose(t, "r", GoalSpec.deadline(deadline), 100 * MB)
    if min(runtimes.values()) <= deadline:
        assert ch.feasible and ch.predicted_runtime <= deadline
    else:
        assert not ch.feasible
