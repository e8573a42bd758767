"""Re-aggregation of run reports from a trace CSV.

A run directory holds ``trace.csv`` and ``summary.json``.  Everything in the
per-job part of the summary except the seed can be recomputed from the trace
alone; :func:`check_run_dir` does that and lists every disagreement.
"""

from __future__ import annotations

import csv
import json
import math
import re
from collections import defaultdict
from pathlib import Path

from .simulator import TRACE_COLUMNS

_END = re.compile(r"seq=(\d+) (\w+) mem=(\d+)")
_SEQ = re.compile(r"seq=(\d+)")
JOB_STATES = ("done", "failed")


def read_trace(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != TRACE_COLUMNS:
        raise ValueError(f"{path}: header is not {','.join(TRACE_COLUMNS)}")
    return [(int(r[0]), r[1], r[2], r[3], r[4], r[5]) for r in rows[1:]]


def stage_timeline(rows, job):
    """``{stage: [[time_ms, running_functions], ...]}`` step functions."""
    points = defaultdict(list)
    count = defaultdict(int)
    for t, ev, j, stage, _task, _detail in rows:
        if j != job or ev not in ("start", "end"):
            continue
        count[stage] += 1 if ev == "start" else -1
        pts = points[stage]
        if pts and pts[-1][0] == t:
            pts[-1][1] = count[stage]
        else:
            pts.append([t, count[stage]])
    return {s: points[s] for s in sorted(points, key=int)}


def aggregate(rows, cost_rate):
    """Per-job aggregates recomputed from trace rows."""
    jobs = {}
    starts = {}

    def rec(j):
        return jobs.setdefault(j, {"submitted_ms": None, "finished_ms": None, "state": None,
                                   "tasks": set(), "invocations": 0, "cost_parts": []})

    for t, ev, j, stage, task, detail in rows:
        if ev == "submitted":
            rec(j)["submitted_ms"] = t
        elif ev in JOB_STATES:
            r = rec(j)
            r["finished_ms"], r["state"] = t, ev
        elif ev == "invoke":
            r = rec(j)
            r["tasks"].add((stage, task))
            r["invocations"] += 1
        elif ev == "start":
            starts[int(_SEQ.search(detail).group(1))] = t
        elif ev == "end":
            m = _END.search(detail)
            seq, mem = int(m.group(1)), int(m.group(3))
            rec(j)["cost_parts"].append(mem / 1024 * (t - starts.pop(seq)) / 1000 * cost_rate)
    out = {}
    for j, r in jobs.items():
        if not j:
            continue
        makespan = None
        if r["submitted_ms"] is not None and r["finished_ms"] is not None:
            makespan = r["finished_ms"] - r["submitted_ms"]
        out[j] = {
            "state": r["state"],
            "makespan_ms": makespan,
            "tasks": len(r["tasks"]),
            "respawns": r["invocations"] - len(r["tasks"]),
            "cost": math.fsum(r["cost_parts"]),
            "stages": stage_timeline(rows, j),
        }
    return out


def compare(summary_jobs, recomputed, rel_tol=1e-9):
    """Human-readable mismatches between a summary and its re-aggregation."""
    problems = []
    for job in summary_jobs:
        j = job["job_id"]
        got = recomputed.get(j)
        if got is None:
            problems.append(f"{j}: absent from trace")
            continue
        for k in ("state", "makespan_ms", "tasks", "respawns"):
            if job.get(k) != got[k]:
                problems.append(f"{j}: {k} summary={job.get(k)!r} trace={got[k]!r}")
        if not math.isclose(job["cost"], got["cost"], rel_tol=rel_tol, abs_tol=1e-15):
            problems.append(f"{j}: cost summary={job['cost']!r} trace={got['cost']!r}")
        if "stages" in job and job["stages"] != got["stages"]:
            problems.append(f"{j}: per-stage timeline differs")
    return problems


def check_run_dir(run_dir):
    """Return ``(summary, recomputed, problems)`` for a run or bench directory."""
    run_dir = Path(run_dir)
    summary = json.loads((run_dir / "summary.json").read_text(encoding="utf-8"))
    rows = read_trace(run_dir / "trace.csv")
    recomputed = aggregate(rows, summary["cost_rate"])
    if (run_dir / "jobs.json").exists():
        jobs = json.loads((run_dir / "jobs.json").read_text(encoding="utf-8"))
    else:
        jobs = summary["jobs"]
    return summary, recomputed, compare(jobs, recomputed)
