"""Stage planning and cloud-side task execution.

``plan_stage`` turns the inputs of a stage into task payloads (plain JSON
dicts, so they can be logged and replayed).  ``FunctionRuntime`` is the code
running inside a function: it executes a payload and writes the outputs to the
store.  Outputs of a task live under ``<job>/<stage>/<task>-<total>/``; if that
prefix already holds objects the kernel is not run again (first writer wins).
"""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field

from . import primitives as prim
from .formats import get_format, key_function
from .kernels import get_kernel, read_bindings
from .store import parse_key, stage_prefix, task_prefix

log = logging.getLogger(__name__)

PAIR_SUFFIX = ".pair.json"

# (fixed seconds, seconds per unit of work); work is bytes unless noted
DEFAULT_DURATIONS = {
    "split": (0.5, 2e-6),
    "sort": (1.0, 1e-5),
    "map": (0.2, 0.0),
    "combine": (0.5, 2e-6),
    "top": (0.5, 2e-6),
    "match": (0.5, 2e-6),
    "partition": (0.5, 2e-6),
    "run": (0.5, 1e-5),
    "run:identity": (0.2, 1e-6),
    "run:toy_compress": (1.0, 2e-5),
    "run:toy_score": (1.0, 3e-5),
    "run:toy_knn": (0.5, 2e-5),   # per distance evaluation
    "run:knn_vote": (0.5, 1e-5),
}


@dataclass
class DurationModel:
    """Affine task durations: ``fixed + per_unit * work`` seconds."""

    coefficients: dict = field(default_factory=lambda: dict(DEFAULT_DURATIONS))

    @classmethod
    def from_dict(cls, d):
        coeffs = dict(DEFAULT_DURATIONS)
        for k, v in (d or {}).items():
            coeffs[k] = (float(v[0]), float(v[1]))
        return cls(coeffs)

    def coefficients_for(self, payload):
        if payload["kind"] == "run":
            key = "run:" + payload["params"]["application"]
            if key in self.coefficients:
                return self.coefficients[key]
        return self.coefficients[payload["kind"]]

    def duration(self, payload):
        a, b = self.coefficients_for(payload)
        return max(1e-3, a + b * payload["work"])


def _sorted_outputs(keys):
    parsed = [(parse_key(k), k) for k in keys]
    return [k for p, k in sorted(parsed, key=lambda pk: (pk[0].ordinal, pk[0].name))]


def stage_outputs(store, job_id, stage_id):
    """Output keys of a stage ordered by (task ordinal, name)."""
    return _sorted_outputs(store.list(stage_prefix(job_id, stage_id)))


def _payload(job_id, stage_id, task, total, stage, fmt, inputs, work, **extra):
    p = {
        "job": job_id,
        "stage": stage_id,
        "task": task,
        "total": total,
        "kind": stage.kind,
        "params": stage.params,
        "format": fmt,
        "memory": stage.config_override["memory_size"],
        "timeout_s": stage.timeout,
        "inputs": list(inputs),
        "work": float(work),
    }
    p.update(extra)
    return p


def plan_stage(compiled, stage_id, inputs, store, job_id, seed=0, kernels=None):
    """Payloads for ``stage_id`` given the ordered list of its input keys."""
    stage = compiled.stages[stage_id]
    fmt_name = compiled.stage_format(stage_id)
    fmt = get_format(fmt_name)
    kind = stage.kind
    params = stage.params
    sizes = [store.size(k) for k in inputs]

    if kind in ("split", "map"):
        return [_payload(job_id, stage_id, i, len(inputs), stage, fmt_name, [k],
                         sizes[i] if kind == "split" else 1.0)
                for i, k in enumerate(inputs)]

    if kind == "run":
        kernel = get_kernel(params["application"], kernels)
        out = []
        for i, k in enumerate(inputs):
            if k.endswith(PAIR_SUFFIX):
                bindings = json.loads(store.get(k))
            else:
                bindings = {"input": k}
            data = read_bindings(store, bindings)
            work = kernel.work(data, params["args"], fmt)
            out.append(_payload(job_id, stage_id, i, len(inputs), stage, fmt_name, [k],
                                work, bindings=bindings))
        return out

    if kind == "sort":
        items = [it for k in inputs for it in fmt.items(store.get(k))]
        total_bytes = sum(sizes)
        if not items:
            return [_payload(job_id, stage_id, 0, 1, stage, fmt_name, inputs, 0.0,
                             pivots=[], numeric=False)]
        n = max(1, math.ceil(total_bytes / params["split_size"]))
        _, pivots, numeric = prim.pivots_for(items, fmt, params["identifier"], n, seed=seed)
        buckets = prim.bucket_items(items, fmt, params["identifier"], pivots, numeric)
        enc = [prim.encode_key(p) for p in pivots]
        return [_payload(job_id, stage_id, i, n, stage, fmt_name, inputs,
                         sum(len(it) for it in bucket), pivots=enc, numeric=numeric)
                for i, bucket in enumerate(buckets)]

    # fan-in kinds: one task over every input
    return [_payload(job_id, stage_id, 0, 1, stage, fmt_name, inputs, sum(sizes), seed=seed)]


class FunctionRuntime:
    """Executes task payloads against a store; counts kernel executions."""

    def __init__(self, store, kernels=None):
        self.store = store
        self.kernels = kernels
        self.executions = Counter()

    def on_function_complete(self, inst):
        self.execute(inst.payload)

    def execute(self, p):
        prefix = task_prefix(p["job"], p["stage"], p["task"], p["total"])
        if self.store.list(prefix):
            log.debug("outputs for %s already present; skipping", prefix)
            return []
        self.executions[(p["job"], p["stage"], p["task"])] += 1
        outputs = self.compute(p)
        keys = []
        for name, data in outputs:
            self.store.put(prefix + name, data)
            keys.append(prefix + name)
        return keys

    def compute(self, p):
        """Pure part of a task: payload -> ``[(name, bytes)]``."""
        store = self.store
        fmt = get_format(p["format"])
        params = p["params"]
        kind = p["kind"]
        if kind == "split":
            chunks = prim.split(store.get(p["inputs"][0]), fmt, params["split_size"])
            return [(prim.chunk_name(c.ordinal), c.data) for c in chunks]
        if kind == "sort":
            numeric = p["numeric"]
            pivots = [prim.decode_key(v, numeric) for v in p["pivots"]]
            items = [it for k in p["inputs"] for it in fmt.items(store.get(k))]
            keyf = key_function(fmt, params["identifier"], numeric)
            mine = [it for it in items
                    if prim.range_index(keyf(it), pivots) == p["task"]]
            ordered, _ = prim.sort_items(mine, fmt, params["identifier"], numeric)
            return [(f"part-{p['task']:06d}", fmt.join(ordered))]
        if kind == "run":
            kernel = get_kernel(params["application"], self.kernels)
            data = read_bindings(store, p["bindings"])
            return kernel.execute(data, params["args"], fmt)
        if kind == "map":
            table = store.list(params["map_table"])
            pairs = prim.map_payloads(p["inputs"], table, params["input_key"],
                                      params["table_key"], params["directories"])
            return [(f"pair-{i:06d}{PAIR_SUFFIX}",
                     json.dumps(b, sort_keys=True).encode()) for i, b in enumerate(pairs)]
        blobs = [store.get(k) for k in p["inputs"]]
        if kind == "combine":
            ident = params.get("identifier")
            data = b"".join(blobs) if ident is None else prim.merge_blobs(blobs, fmt, ident)
            return [("combined", data)]
        if kind == "top":
            return [("top", prim.top(b"".join(blobs), fmt, params["identifier"],
                                     params["number"]))]
        if kind == "match":
            path = prim.match(list(zip(p["inputs"], blobs)), fmt, params["identifier"],
                              params["find"])
            return [("matched", store.get(path))]
        if kind == "partition":
            data = b"".join(blobs)
            n = max(1, math.ceil(len(data) / params["split_size"]))
            items = fmt.items(data)
            if not items:
                return [("ranges.json", b"[]")]
            lo, pivots, numeric = prim.pivots_for(items, fmt, params["identifier"], n,
                                                  seed=p.get("seed", 0))
            bounds = [prim.encode_key(lo), *[prim.encode_key(v) for v in pivots], None]
            ranges = [[bounds[i], bounds[i + 1]] for i in range(n)]
            return [("ranges.json", json.dumps({"numeric": numeric, "ranges": ranges},
                                               sort_keys=True).encode())]
        raise ValueError(f"unknown stage kind {kind!r}")

