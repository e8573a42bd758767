import json
import logging
from pathlib import Path

import pytest

from lambdaflow import cli
from lambdaflow.apps import bed_records
from lambdaflow.simulator import ClusterModel
from lambdaflow.workloads import RunConfig, WorkloadSpec, arrivals, bench

PIPELINES = Path(__file__).resolve().parent.parent / "pipelines"


@pytest.fixture(autouse=True)
def _quiet():
    logging.disable(logging.WARNING)
    yield
    logging.disable(logging.NOTSET)


# -- workloads -----------------------------------------------------------------------------

def test_arrival_shapes():
    assert arrivals(WorkloadSpec("single")) == [0.0]
    assert len(arrivals(WorkloadSpec("uniform", interval_s=10, duration_s=600))) == 60
    bursty = arrivals(WorkloadSpec("bursty", interval_s=60, duration_s=900, burst_size=100,
                                   burst_period_s=600))
    assert len(bursty) == 15 + 100 and bursty.count(600) == 101
    diurnal = arrivals(WorkloadSpec("diurnal", interval_s=10, duration_s=600, period_s=600,
                                    peak_jobs_per_interval=15))
    assert 0 < len(diurnal) <= 60 * 15
    with pytest.raises(ValueError):
        WorkloadSpec("bursty", burst_size=0)


def test_uniform_bench_completes_every_job():
    r = bench(RunConfig(workload=dict(kind="uniform", interval_s=10, duration_s=600)))
    assert len(r.job_ids) == 60
    assert r.summary()["done"] == 60


def test_bursty_backlog_drains_within_one_makespan():
    r = bench(RunConfig(workload=dict(kind="bursty", interval_s=60, duration_s=900,
                                      burst_size=100, burst_period_s=600)))
    longest_s = max(r.session.orch.jobs[j].makespan_ms for j in r.job_ids) / 1000
    after = [s for s in r.samples if s.time_s >= 600]
    assert max(s.pending_jobs + s.running_jobs for s in after) >= 100
    drained = next(s.time_s for s in after if s.pending_jobs == 0 and s.running_jobs == 0)
    assert drained - 600 <= longest_s + r.config.sample_interval_s


def test_diurnal_load_tracks_arrivals():
    r = bench(RunConfig(workload=dict(kind="diurnal", interval_s=10, duration_s=600,
                                      period_s=600, peak_jobs_per_interval=15)))
    by_time = {s.time_s: s for s in r.samples}
    quiet = [by_time[t].vcpus_in_use for t in (1, 2, 3, 4) if t in by_time]
    busy = [by_time[t].vcpus_in_use for t in range(295, 305) if t in by_time]
    assert max(busy) > max(quiet)


def test_run_config_round_trip(tmp_path):
    cfg = RunConfig(cluster=ClusterModel(concurrency_limit=8), seed=3,
                    workload=dict(kind="uniform", interval_s=5, duration_s=20))
    again = RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again.to_dict() == cfg.to_dict()
    assert cfg.with_seed(9).cluster.rng_seed == 9
    with pytest.raises(ValueError):
        RunConfig.from_dict({"colour": "blue"})


# -- CLI -------------------------------------------------------------------------------------

@pytest.fixture
def bed_file(tmp_path):
    p = tmp_path / "methyl.bed"
    p.write_bytes(bed_records(60_000, 1))
    return p


def test_compile_valid_and_invalid(tmp_path, capsys):
    out = tmp_path / "c.json"
    assert cli.main(["compile", str(PIPELINES / "compression.spec.json"), "-o", str(out)]) == 0
    again = tmp_path / "c2.json"
    assert cli.main(["compile", str(out), "-o", str(again)]) == 0
    assert out.read_bytes() == again.read_bytes()
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"name": "x", "table": "store://a", "log": "store://b",
                               "timeout": 0, "stages": []}))
    assert cli.main(["compile", str(bad)]) == 2
    assert "InvalidTimeout" in capsys.readouterr().err
    assert cli.main(["compile", str(tmp_path / "missing.json")]) == 1


def test_run_then_report_is_consistent(tmp_path, bed_file, capsys):
    run_dir = tmp_path / "run"
    assert cli.main(["run", str(PIPELINES / "compression.spec.json"), str(bed_file),
                     "--seed", "2", "--output-dir", str(run_dir)]) == 0
    summary = json.loads((run_dir / "summary.json").read_text())
    assert summary["seed"] == 2 and summary["jobs"][0]["state"] == "done"
    assert (run_dir / "trace.csv").exists() and list((run_dir / "outputs").rglob("*"))
    capsys.readouterr()
    assert cli.main(["report", str(run_dir)]) == 0
    assert capsys.readouterr().out.strip().endswith("consistent")

    summary["jobs"][0]["cost"] *= 2
    (run_dir / "summary.json").write_text(json.dumps(summary))
    assert cli.main(["report", str(run_dir)]) == 1
    assert "MISMATCH" in capsys.readouterr().out


def test_run_without_fault_tolerance_can_fail(tmp_path, bed_file):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"cluster": {"failure_prob": 0.5}}))
    codes = {cli.main(["run", str(PIPELINES / "compression.spec.json"), str(bed_file),
                       "--config", str(cfg), "--seed", str(seed), "--no-fault-tolerance",
                       "--output-dir", str(tmp_path / f"r{seed}")])
             for seed in range(5)}
    assert 3 in codes


def test_unknown_kernel_is_invalid(tmp_path, bed_file, capsys):
    spec = tmp_path / "p.json"
    spec.write_text(json.dumps({"name": "p", "table": "store://a", "log": "store://b",
                                "timeout": 60, "input_format": "new_line",
                                "stages": [{"kind": "run", "application": "nope"}]}))
    assert cli.main(["run", str(spec), str(bed_file), "--output-dir", str(tmp_path / "o")]) == 2
    assert "UnknownApplication" in capsys.readouterr().err
    assert cli.main(["test-local", str(spec), str(bed_file),
                     "--output-dir", str(tmp_path / "o")]) == 2


def test_bad_config_is_invalid(tmp_path, bed_file):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"cluster": {"cores": 3}}))
    assert cli.main(["bench", "--config", str(cfg), "--output-dir", str(tmp_path)]) == 2


def test_output_dir_from_environment(tmp_path, bed_file, monkeypatch):
    target = tmp_path / "from-env"
    monkeypatch.setenv(cli.OUTPUT_DIR_ENV, str(target))
    assert cli.main(["test-local", str(PIPELINES / "compression.spec.json"),
                     str(bed_file)]) == 0
    assert list((target / "outputs").rglob("*"))


def test_bench_with_vm_baseline_and_report(tmp_path, capsys):
    wl = tmp_path / "wl.json"
    wl.write_text(json.dumps({"kind": "uniform", "interval_s": 10, "duration_s": 60}))
    out = tmp_path / "bench"
    assert cli.main(["bench", "--workload", str(wl), "--baseline", "vm", "--seed", "1",
                     "--output-dir", str(out)]) == 0
    for name in ("bench.csv", "jobs.json", "summary.json", "trace.csv"):
        assert (out / name).exists(), name
    summary = json.loads((out / "summary.json").read_text())
    assert summary["done"] == 6 and "vm_mean_completion_s" in summary
    systems = {line.split(",")[0] for line in (out / "bench.csv").read_text().splitlines()[1:]}
    assert systems == {"serverless", "vm"}
    capsys.readouterr()
    assert cli.main(["report", str(out)]) == 0
