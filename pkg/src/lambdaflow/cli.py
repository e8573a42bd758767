"""Command-line entry point: ``lambdaflow <command> ...``.

Exit codes: 0 success, 1 inconsistent report or I/O problem, 2 invalid
pipeline, configuration or kernel, 3 job failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import pipeline as pl
from .errors import LambdaflowError, SpecError, UnknownApplication
from .orchestrator import run_local
from .report import check_run_dir, stage_timeline
from .workloads import RunConfig, bench

log = logging.getLogger("lambdaflow.cli")

OUTPUT_DIR_ENV = "LAMBDAFLOW_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "lambdaflow-out"

EXIT_OK, EXIT_IO, EXIT_INVALID, EXIT_JOB_FAILED = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _read_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read {path}: {exc.strerror}") from None
    except ValueError as exc:
        raise CliError(EXIT_INVALID, f"{path}: not JSON: {exc}") from None


def load_pipeline(path):
    """Accept either a compiled document or the flat builder form."""
    doc = _read_json(path)
    if isinstance(doc, dict) and "schema_version" in doc:
        return pl.load(json.dumps(doc))
    if not isinstance(doc, dict):
        raise pl.Malformed("pipeline file must hold a JSON object")
    return pl.compile_pipeline(pl.from_builder_document(doc))[0]


def load_config(args):
    d = _read_json(args.config) if args.config else {}
    if not isinstance(d, dict):
        raise CliError(EXIT_INVALID, "run config must be a JSON object")
    try:
        cfg = RunConfig.from_dict(d)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        if args.scheduler is not None:
            cfg = RunConfig.from_dict({**cfg.to_dict(), "scheduler": args.scheduler})
    except (TypeError, ValueError) as exc:
        raise CliError(EXIT_INVALID, f"invalid run config: {exc}") from None
    if args.no_fault_tolerance:
        cfg.fault_tolerance = False
    return cfg


def output_dir(args, cfg=None):
    if args.output_dir:
        return Path(args.output_dir)
    if cfg is not None and cfg.output_dir:
        return Path(cfg.output_dir)
    return Path(os.environ.get(OUTPUT_DIR_ENV, DEFAULT_OUTPUT_DIR))


def parse_tables(specs):
    """``KEY=PATH`` pairs; a directory PATH puts every file below it under KEY/."""
    out = {}
    for spec in specs or ():
        key, sep, path = spec.partition("=")
        if not sep or not key:
            raise CliError(EXIT_INVALID, f"--table expects KEY=PATH, got {spec!r}")
        p = Path(path)
        if p.is_dir():
            for f in sorted(p.rglob("*")):
                if f.is_file():
                    out[f"{key.rstrip('/')}/{f.relative_to(p).as_posix()}"] = f.read_bytes()
        elif p.is_file():
            out[key] = p.read_bytes()
        else:
            raise CliError(EXIT_IO, f"table file {path} does not exist")
    return out


def _read_input(path):
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read {path}: {exc.strerror}") from None


def write_outputs(outdir, outputs):
    base = Path(outdir) / "outputs"
    for rel, data in sorted(outputs.items()):
        p = base / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_bytes(data)
    return base


def _dump(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# -- commands -------------------------------------------------------------------------------

def cmd_compile(args):
    compiled = load_pipeline(args.spec)
    data = compiled.to_json()
    if args.output:
        Path(args.output).write_bytes(data)
        print(args.output)
    else:
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
    return EXIT_OK


def cmd_run(args):
    cfg = load_config(args)
    compiled = load_pipeline(args.pipeline)
    data = _read_input(args.input)
    tables = parse_tables(args.table)
    s = cfg.session()
    for k, v in sorted(tables.items()):
        s.store.put(k, v)
    key = s.put_input(f"inputs/{Path(args.input).name}", data)
    job_id = s.submit(compiled, key, seed=cfg.seed)
    s.run()
    s.orch.finalize()
    outdir = output_dir(args, cfg)
    outdir.mkdir(parents=True, exist_ok=True)
    s.sim.write_trace_csv(outdir / "trace.csv")
    job = dict(s.orch.job_summary(job_id))
    job["stages"] = stage_timeline([(e.time_ms, e.event, e.job, str(e.stage), str(e.task),
                                     e.detail) for e in s.sim.trace], job_id)
    summary = {
        "seed": cfg.seed,
        "pipeline": compiled.name,
        "cost_rate": cfg.cluster.cost_rate,
        "config": cfg.to_dict(),
        "jobs": [job],
    }
    _dump(outdir / "summary.json", summary)
    if job["state"] == "done":
        write_outputs(outdir, s.outputs(job_id))
    print(f"{job_id} {job['state']} makespan_ms={job['makespan_ms']} tasks={job['tasks']} "
          f"respawns={job['respawns']} cost={job['cost']:.9f} -> {outdir}")
    return EXIT_OK if job["state"] == "done" else EXIT_JOB_FAILED


def cmd_bench(args):
    cfg = load_config(args)
    if args.workload:
        wl = _read_json(args.workload)
        try:
            cfg = RunConfig.from_dict({**cfg.to_dict(), "workload": wl})
        except (TypeError, ValueError) as exc:
            raise CliError(EXIT_INVALID, f"invalid workload: {exc}") from None
    result = bench(cfg, baseline_vm=args.baseline == "vm")
    outdir = result.write(output_dir(args, cfg))
    summ = result.summary()
    print(" ".join(f"{k}={summ[k]}" for k in sorted(summ)) + f" -> {outdir}")
    return EXIT_OK


def cmd_test_local(args):
    compiled = load_pipeline(args.pipeline)
    outputs = run_local(compiled, _read_input(args.input), tables=parse_tables(args.table),
                        seed=args.seed or 0, input_name=Path(args.input).name)
    base = write_outputs(output_dir(args), outputs)
    for rel in sorted(outputs):
        print(base / rel)
    return EXIT_OK


def cmd_report(args):
    try:
        summary, recomputed, problems = check_run_dir(args.run_dir)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read run directory: {exc}") from None
    for j in sorted(recomputed):
        r = recomputed[j]
        print(f"{j} {r['state']} makespan_ms={r['makespan_ms']} tasks={r['tasks']} "
              f"respawns={r['respawns']} cost={r['cost']:.9f}")
    print(f"seed={summary.get('seed')}")
    for p in problems:
        print(f"MISMATCH {p}")
    print("consistent" if not problems else f"{len(problems)} mismatches")
    return EXIT_OK if not problems else EXIT_IO


# -- parser --------------------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run-config JSON file")
    common.add_argument("--seed", type=int, help="seed for every random draw")
    common.add_argument("--scheduler", choices=("fifo", "round_robin", "priority"))
    common.add_argument("--no-fault-tolerance", action="store_true",
                        help="disable the straggler monitor")
    common.add_argument("--output-dir",
                        help=f"defaults to ${OUTPUT_DIR_ENV} or ./{DEFAULT_OUTPUT_DIR}")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="lambdaflow", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("compile", parents=[common], help="validate and compile a pipeline")
    c.add_argument("spec")
    c.add_argument("-o", "--output")
    c.set_defaults(fn=cmd_compile)

    r = sub.add_parser("run", parents=[common], help="run one job on the simulator")
    r.add_argument("pipeline")
    r.add_argument("input")
    r.add_argument("--table", action="append", metavar="KEY=PATH")
    r.set_defaults(fn=cmd_run)

    b = sub.add_parser("bench", parents=[common], help="run a workload of many jobs")
    b.add_argument("--workload", help="workload JSON file (overrides the config's)")
    b.add_argument("--baseline", choices=("vm",))
    b.set_defaults(fn=cmd_bench)

    t = sub.add_parser("test-local", parents=[common], help="run stages serially in-process")
    t.add_argument("pipeline")
    t.add_argument("input")
    t.add_argument("--table", action="append", metavar="KEY=PATH")
    t.set_defaults(fn=cmd_test_local)

    rp = sub.add_parser("report", parents=[common], help="re-aggregate a run from its trace")
    rp.add_argument("run_dir")
    rp.set_defaults(fn=cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (SpecError, UnknownApplication) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except LambdaflowError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_JOB_FAILED


if __name__ == "__main__":
    sys.exit(main())
