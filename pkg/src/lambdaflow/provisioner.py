"""Choosing split sizes from canary runs and a completed profile table.

Rows of the profile table are job fingerprints ``<pipeline>:<log2 input
bytes>``; columns are split-size configurations, one split size per phase
stage, written ``"1000000"`` or ``"1000000|500000"``.  Cells hold runtimes in
seconds and are either observed or predicted.  Missing cells are filled by a
low-rank factorisation fitted with SGD.

Canary runs execute on a prefix of the input.  A canary runtime is scaled to
the full input by the ratio of execution waves, ``ceil(tasks / max_lambdas)``,
between the full and canary run.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numba
import numpy as np

from .errors import Infeasible, Underdetermined
from .goals import GoalSpec
from .simulator import DEFAULT_COST_RATE, ClusterModel, Simulator

log = logging.getLogger(__name__)

MB = 1_000_000
DEFAULT_COLUMN_SPLIT = MB
CANARY_MAX_BYTES = 20 * MB
MAX_COLUMNS = 12
DEVIATION_THRESHOLD = 0.20


# -- fingerprints and columns ---------------------------------------------------

def fingerprint(pipeline_name, input_bytes):
    return f"{pipeline_name}:{int(math.log2(max(1, input_bytes)))}"


def column_id(sizes):
    return "|".join(str(int(s)) for s in sizes)


def parse_column(cid):
    return tuple(int(s) for s in cid.split("|"))


def max_concurrency_split(input_bytes, max_lambdas):
    """Smallest grid split ``1MB * 2**k`` that needs at most ``max_lambdas`` tasks."""
    exact = max(1, math.ceil(input_bytes / max_lambdas))
    k = math.ceil(math.log2(exact / DEFAULT_COLUMN_SPLIT))
    return int(DEFAULT_COLUMN_SPLIT * 2.0 ** k)


def split_grid(input_bytes, max_lambdas, cap=MAX_COLUMNS):
    """Split sizes ``1MB * 2**k`` from the max-concurrency split (or 1MB if
    smaller) up to the whole input; at most ``cap``, keeping the two probes."""
    q = max_concurrency_split(input_bytes, max_lambdas)
    s = min(DEFAULT_COLUMN_SPLIT, q)
    hi = max(DEFAULT_COLUMN_SPLIT, input_bytes)
    sizes = []
    while s <= hi:
        sizes.append(int(s))
        s *= 2
    while len(sizes) > cap:
        drop = next(x for x in reversed(sizes) if x not in (DEFAULT_COLUMN_SPLIT, q))
        sizes.remove(drop)
    return sizes


def column_grid(input_bytes, max_lambdas, n_phases=1, cap=MAX_COLUMNS):
    """Candidate configurations as tuples of per-phase split sizes.

    Multi-phase grids hold the uniform vectors plus the mixed canary vectors;
    uniform vectors with the coarsest splits are dropped to respect ``cap``.
    """
    uniform = [(s,) * n_phases for s in split_grid(input_bytes, max_lambdas, cap)]
    if n_phases == 1:
        return uniform
    probes = list(plan_canary(input_bytes, n_phases, max_lambdas).configs)
    extra = [c for c in probes if c not in uniform]
    while len(uniform) + len(extra) > cap:
        drop = next(c for c in reversed(uniform) if c not in probes)
        uniform.remove(drop)
    return uniform + extra


@dataclass(frozen=True)
class CanaryPlan:
    input_bytes: int
    canary_bytes: int
    configs: tuple

    @property
    def columns(self):
        return [column_id(c) for c in self.configs]


def plan_canary(input_bytes, n_phases=1, max_lambdas=1000):
    """Canary prefix size and the configurations to probe.

    Single-phase jobs probe the default split and the max-concurrency split.
    Multi-phase jobs add the two mixed vectors (first phase at one extreme,
    later phases at the other).
    """
    canary = min(CANARY_MAX_BYTES, input_bytes)
    lo = max_concurrency_split(input_bytes, max_lambdas)
    alt = lo if lo != DEFAULT_COLUMN_SPLIT else 2 * DEFAULT_COLUMN_SPLIT
    d = DEFAULT_COLUMN_SPLIT
    if n_phases == 1:
        configs = ((d,), (alt,))
    else:
        rest = n_phases - 1
        configs = ((d,) * n_phases, (alt,) * n_phases,
                   (alt,) + (d,) * rest, (d,) + (alt,) * rest)
    return CanaryPlan(input_bytes, canary, configs)


def snap_prefix(blob, n, delimiter=b"\n"):
    """First ``n`` bytes of ``blob``, extended to the next item boundary."""
    if n >= len(blob):
        return blob
    cut = blob.find(delimiter, n - 1)
    return blob if cut < 0 else blob[:cut + 1]


def waves(input_bytes, split, max_lambdas):
    return math.ceil(max(1, math.ceil(input_bytes / split)) / max_lambdas)


def scale_canary(runtime_s, canary_bytes, input_bytes, sizes, max_lambdas):
    ratio = max(waves(input_bytes, s, max_lambdas) / waves(canary_bytes, s, max_lambdas)
                for s in sizes)
    return runtime_s * ratio


# -- profile table -------------------------------------------------------------------

@dataclass
class Cell:
    value: float
    observed: bool
    source: str = "full"


class ProfileTable:
    CSV_COLUMNS = ("row", "column", "value", "observed", "source")

    def __init__(self):
        self.cells = {}
        self._predicted = {}

    @property
    def rows(self):
        return sorted({r for r, _ in self.cells})

    @property
    def columns(self):
        return sorted({c for (_, c), cell in self.cells.items() if cell.observed},
                      key=parse_column)

    def record(self, row, column, runtime_s, observed=True, source="full"):
        if not runtime_s > 0:
            raise ValueError("runtime must be > 0")
        self.cells[(row, column)] = Cell(float(runtime_s), observed, source)
        self._predicted.pop((row, column), None)

    def cell(self, row, column):
        return self.cells.get((row, column))

    def is_observed(self, row, column):
        c = self.cells.get((row, column))
        return c is not None and c.observed

    def observed_cells(self):
        return {k: c.value for k, c in self.cells.items() if c.observed}

    def complete(self, **sgd):
        """Fill every empty (row, column) pair with an SGD prediction."""
        self._predicted = complete_table(self, **sgd)
        return dict(self._predicted)

    def predict(self, row, column):
        c = self.cells.get((row, column))
        if c is not None and c.observed:
            return c.value
        if (row, column) not in self._predicted:
            self.complete()
        return self._predicted.get((row, column))

    def save_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.CSV_COLUMNS)
            for (r, c), cell in sorted(self.cells.items()):
                w.writerow((r, c, repr(cell.value), int(cell.observed), cell.source))

    @classmethod
    def load_csv(cls, path):
        t = cls()
        path = Path(path)
        if not path.exists():
            return t
        with open(path, encoding="utf-8", newline="") as fh:
            for rec in csv.DictReader(fh):
                t.cells[(rec["row"], rec["column"])] = Cell(
                    float(rec["value"]), rec["observed"] == "1", rec.get("source") or "full")
        return t


@numba.njit(cache=True)
def _sgd(rows, cols, vals, n_rows, n_cols, rank, lr, reg, epochs, tol, seed):
    np.random.seed(seed)
    U = np.random.uniform(-0.1, 0.1, (n_rows, rank))
    V = np.random.uniform(-0.1, 0.1, (n_cols, rank))
    m = vals.shape[0]
    prev = np.inf
    loss = np.inf
    done = 0
    for ep in range(epochs):
        order = np.random.permutation(m)
        for t in range(m):
            idx = order[t]
            i = rows[idx]
            j = cols[idx]
            err = vals[idx] - np.dot(U[i], V[j])
            for k in range(rank):
                u = U[i, k]
                v = V[j, k]
                U[i, k] += lr * (err * v - reg * u)
                V[j, k] += lr * (err * u - reg * v)
        loss = 0.0
        for idx in range(m):
            e = vals[idx] - np.dot(U[rows[idx]], V[cols[idx]])
            loss += e * e
        loss /= m
        done = ep + 1
        if abs(prev - loss) < tol * max(loss, 1e-12):
            break
        prev = loss
    return U, V, done, loss


@dataclass(frozen=True)
class SgdSettings:
    rank: int = 4
    lr: float = 0.05
    epochs: int = 5000
    tol: float = 1e-8
    reg: float = 1e-4
    seed: int = 0


def factorize(observed, settings=SgdSettings()):
    """Fit ``R ~ U V^T`` on ``{(row, col): value}``; returns a predictor."""
    if not observed:
        raise Underdetermined("profile table has no observations")
    row_ids = sorted({r for r, _ in observed})
    col_ids = sorted({c for _, c in observed})
    ri = {r: i for i, r in enumerate(row_ids)}
    ci = {c: j for j, c in enumerate(col_ids)}
    keys = sorted(observed)
    rows = np.array([ri[r] for r, _ in keys], dtype=np.int64)
    cols = np.array([ci[c] for _, c in keys], dtype=np.int64)
    raw = np.array([observed[k] for k in keys], dtype=np.float64)
    scale = float(raw.mean())
    U, V, epochs, loss = _sgd(rows, cols, raw / scale, len(row_ids), len(col_ids),
                              settings.rank, settings.lr, settings.reg, settings.epochs,
                              settings.tol, settings.seed)
    log.debug("sgd: %d cells, %d epochs, loss %.3g", len(keys), epochs, loss)
    floor = 1e-3 * float(raw.min())

    def predict(r, c):
        if r not in ri or c not in ci:
            return None
        return max(floor, float(U[ri[r]] @ V[ci[c]]) * scale)
    predict.rows, predict.columns, predict.epochs = row_ids, col_ids, epochs
    return predict


def complete_table(table, settings=SgdSettings()):
    """Predictions for every empty cell of ``table`` (observed columns only)."""
    observed = table.observed_cells()
    if not observed:
        raise Underdetermined("profile table has no observations")
    predict = factorize(observed, settings)
    out = {}
    for r in predict.rows:
        for c in predict.columns:
            if not table.is_observed(r, c):
                out[(r, c)] = predict(r, c)
    return out


# -- choice ----------------------------------------------------------------------------

def task_count(input_bytes, sizes):
    return max(max(1, math.ceil(input_bytes / s)) for s in sizes)


def predicted_cost(runtime_s, input_bytes, sizes, memory_mb, max_lambdas,
                   cost_rate=DEFAULT_COST_RATE):
    """Ledger formula applied to a predicted runtime and task count."""
    n = min(task_count(input_bytes, sizes), max_lambdas)
    return memory_mb / 1024 * runtime_s * n * cost_rate


@dataclass
class Choice:
    row: str
    column: str
    sizes: tuple
    predicted_runtime: float
    predicted_cost: float
    goal: GoalSpec
    feasible: bool = True
    candidates: dict = field(default_factory=dict)


def choose(table, row, goal, input_bytes, *, memory_mb=1024, max_lambdas=1000,
           cost_rate=DEFAULT_COST_RATE, columns=None, strict=False):
    """Pick a column for ``row`` under ``goal``.

    Only columns observed in at least one row are candidates; an unobserved
    column has no fitted factor.  When no column meets a deadline or cost
    cap, :class:`Infeasible` is raised if ``strict``; otherwise the
    best-effort column is returned with ``feasible=False``.
    """
    goal = GoalSpec.from_dict(goal)
    observed_cols = set(table.columns)
    cands = [c for c in (columns if columns is not None else table.columns)
             if c in observed_cols]
    if not any(table.is_observed(row, c) for c in observed_cols):
        raise Underdetermined(f"row {row!r} has no observed cell")
    preds = {}
    for c in cands:
        t = table.predict(row, c)
        if t is None:
            continue
        sizes = parse_column(c)
        preds[c] = (t, predicted_cost(t, input_bytes, sizes, memory_mb, max_lambdas, cost_rate))
    if not preds:
        raise Underdetermined(f"no predictable column for row {row!r}")

    def make(c, feasible=True):
        return Choice(row, c, parse_column(c), preds[c][0], preds[c][1], goal, feasible,
                      dict(preds))

    order = sorted(preds, key=lambda c: parse_column(c))
    best = min(order, key=lambda c: (preds[c][0], preds[c][1]))
    if goal.kind == "best_effort":
        return make(best)
    if goal.kind == "deadline":
        ok = [c for c in order if preds[c][0] <= goal.value]
        if ok:
            return make(min(ok, key=lambda c: (preds[c][1], preds[c][0])))
    else:
        ok = [c for c in order if preds[c][1] <= goal.value]
        if ok:
            return make(min(ok, key=lambda c: (preds[c][0], preds[c][1])))
    msg = f"no column satisfies {goal.kind}={goal.value} for {row!r}"
    if strict:
        raise Infeasible(msg)
    log.warning("%s; falling back to best effort", msg)
    return make(best, feasible=False)


# -- online provisioner -------------------------------------------------------------------

@dataclass
class Observation:
    row: str
    column: str
    predicted: float
    measured: float

    @property
    def relative_error(self):
        return abs(self.predicted - self.measured) / self.measured


class Provisioner:
    """Canary runs, table completion, choice, and online updates."""

    def __init__(self, table=None, *, max_lambdas=1000, memory_mb=1024,
                 cost_rate=DEFAULT_COST_RATE, canary_runner=None,
                 settings=SgdSettings(), table_path=None):
        self.table = table if table is not None else (
            ProfileTable.load_csv(table_path) if table_path else ProfileTable())
        self.table_path = table_path
        self.max_lambdas = max_lambdas
        self.memory_mb = memory_mb
        self.cost_rate = cost_rate
        self.canary_runner = canary_runner
        self.settings = settings
        self.history = []
        self._pending = {}

    def record_canaries(self, row, plan, runner):
        for sizes in plan.configs:
            cid = column_id(sizes)
            cell = self.table.cell(row, cid)
            if cell is not None and cell.observed and cell.source == "full":
                continue
            t = runner(sizes, plan.canary_bytes)
            est = scale_canary(t, plan.canary_bytes, plan.input_bytes, sizes, self.max_lambdas)
            self.table.record(row, cid, est, observed=True, source="canary")

    def provision(self, name, input_bytes, n_phases, goal, runner):
        """Run canaries for a job and choose its configuration."""
        row = fingerprint(name, input_bytes)
        plan = plan_canary(input_bytes, n_phases, self.max_lambdas)
        self.record_canaries(row, plan, runner)
        self.table.complete(settings=self.settings)
        cols = [column_id(c) for c in column_grid(input_bytes, self.max_lambdas, n_phases)]
        return choose(self.table, row, goal, input_bytes, memory_mb=self.memory_mb,
                      max_lambdas=self.max_lambdas, cost_rate=self.cost_rate, columns=cols)

    def observe_choice(self, choice, measured_s):
        """Record a full run; the cell is overwritten when it was never
        measured in full or the measurement deviates by more than 20%."""
        self.history.append(Observation(choice.row, choice.column,
                                        choice.predicted_runtime, measured_s))
        cell = self.table.cell(choice.row, choice.column)
        deviates = abs(measured_s - choice.predicted_runtime) > \
            DEVIATION_THRESHOLD * choice.predicted_runtime
        if cell is None or not cell.observed or cell.source != "full" or deviates:
            self.table.record(choice.row, choice.column, measured_s, True, "full")
        if self.table_path:
            self.table.save_csv(self.table_path)

    # orchestrator hooks

    def size_job(self, job, store):
        compiled = job.pipeline
        phases = compiled.phase_stages()
        if not phases:
            return compiled
        data = store.get(job.input_key)
        runner = self.canary_runner or (lambda sizes, n: _simulate_canary(
            compiled, phases, snap_prefix(data, n), sizes, job.seed, self.max_lambdas))
        choice = self.provision(compiled.name, len(data), len(phases), job.goal, runner)
        self._pending[job.job_id] = choice
        return compiled.with_split_sizes(dict(zip(phases, choice.sizes)))

    def observe(self, job, measured_s):
        choice = self._pending.pop(job.job_id, None)
        if choice is not None:
            self.observe_choice(choice, measured_s)


def _simulate_canary(compiled, phases, data, sizes, seed, max_lambdas):
    from .session import simulate
    sized = compiled.with_split_sizes(dict(zip(phases, sizes)))
    s, job_id = simulate(sized, data, model=ClusterModel(concurrency_limit=max_lambdas),
                         seed=seed)
    return max(1e-3, s.orch.jobs[job_id].makespan_ms / 1000)


# -- analytic split-job scenarios ------------------------------------------------------------

@dataclass
class SplitRun:
    split: int
    tasks: int
    runtime_s: float
    cost: float
    respawns: int
    completed: bool = True


@dataclass
class SplitJobModel:
    """A partition -> n parallel tasks -> combine job on the simulator.

    Task ``i`` handles ``split`` bytes and runs ``fixed_s + per_mb_s * MB``
    seconds times a uniform jitter in ``[1 - jitter, 1 + jitter]``.  The
    partition and combine steps cost ``*_per_task_s`` per parallel task.
    Tasks that fail or time out are re-invoked as soon as they end.
    """

    input_bytes: int
    fixed_s: float = 1.0
    per_mb_s: float = 1.0
    partition_per_task_s: float = 0.0
    combine_per_task_s: float = 0.0
    jitter: float = 0.05
    memory_mb: int = 1024
    max_attempts: int = 8
    cluster: ClusterModel = field(default_factory=ClusterModel)

    @property
    def max_lambdas(self):
        return self.cluster.concurrency_limit

    def columns(self):
        return split_grid(self.input_bytes, self.max_lambdas)

    def run(self, split, seed=0, input_bytes=None):
        size = self.input_bytes if input_bytes is None else input_bytes
        n = max(1, math.ceil(size / split))
        sim = Simulator(dataclasses.replace(self.cluster, rng_seed=seed))
        rng = random.Random(seed * 7919 + n)
        state = {"left": n, "respawns": 0, "end": None}

        def body(i):
            b = min(split, size - i * split) if size > i * split else 0
            return (self.fixed_s + self.per_mb_s * b / MB) * \
                (1 + self.jitter * (2 * rng.random() - 1))

        def start_task(i, attempt):
            sim.invoke(i, self.memory_mb, body(i), on_end=lambda inst: task_end(inst, attempt))

        def task_end(inst, attempt):
            if inst.produced_output:
                state["left"] -= 1
                if state["left"] == 0:
                    sim.invoke("combine", self.memory_mb,
                               max(1e-3, self.combine_per_task_s * n), on_end=done)
            elif attempt < self.max_attempts:
                state["respawns"] += 1
                start_task(inst.payload, attempt + 1)

        def done(inst):
            state["end"] = sim.now

        def fan_out(_inst):
            for i in range(n):
                start_task(i, 1)

        sim.invoke("partition", self.memory_mb, max(1e-3, self.partition_per_task_s * n),
                   on_end=fan_out)
        sim.run_to_quiescence()
        # a job that exhausts its attempts is charged the time it spent
        end = state["end"] if state["end"] is not None else sim.now
        return SplitRun(split, n, end / 1000, sim.cost(), state["respawns"],
                        state["end"] is not None)

    def runner(self, seed=0):
        """Canary runner for :meth:`Provisioner.provision`."""
        return lambda sizes, canary_bytes: self.run(sizes[0], seed, canary_bytes).runtime_s

    def exhaustive(self, seed=0, columns=None):
        return {s: self.run(s, seed) for s in (columns or self.columns())}
