"""The three shipped example pipelines and seeded input generators.

``compression``
    sort by start position, then run-length compress each sorted range.
``proteomics``
    split the spectra, score every spectrum, merge the scores by value.
``knn``
    split the test points, pair each chunk with every training object,
    find neighbours per pair, merge by test id, vote on labels.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Callable

from .pipeline import Pipeline

KNN_TABLE_PREFIX = "tables/knn-train/"


def compression_pipeline(split_size=100_000, memory_size=2240, timeout=600):
    return (Pipeline("compression", "store://bucket", "store://log", timeout,
                     {"memory_size": memory_size})
            .input("new_line")
            .sort("start_position", params={"split_size": split_size},
                  config={"memory_size": 3008})
            .run("toy_compress"))


def proteomics_pipeline(split_size=50_000, memory_size=1024, timeout=600):
    return (Pipeline("proteomics", "store://spectra", "store://spectra-log", timeout,
                     {"memory_size": memory_size})
            .input("new_line")
            .split(params={"split_size": split_size})
            .run("toy_score", output_format="tsv")
            .combine(identifier=1))


def knn_pipeline(split_size=20_000, k=3, memory_size=1024, table=KNN_TABLE_PREFIX,
                 timeout=600):
    return (Pipeline("knn", "store://points", "store://points-log", timeout,
                     {"memory_size": memory_size})
            .input("new_line")
            .split(params={"split_size": split_size})
            .map(table, "input", "table")
            .run("toy_knn", params={"k": k, "input_key": "input", "table_key": "table"},
                 output_format="tsv")
            .combine(identifier=0)
            .run("knn_vote", params={"k": k}))


# -- input generators ------------------------------------------------------------------

def bed_records(n_bytes, seed=0):
    """BED-like methylation records, ``chrom start end name score strand``."""
    rng = random.Random(seed)
    lines = []
    size = 0
    while size < n_bytes:
        start = rng.randrange(0, 50_000_000)
        line = "chr%d\t%d\t%d\tsite%d\t%d\t%s\n" % (
            rng.randint(1, 22), start, start + rng.randint(1, 500), rng.randrange(10**6),
            rng.choice((0, 0, 0, 100, 100, 500, 1000)), rng.choice("++++-"))
        lines.append(line)
        size += len(line)
    return "".join(lines).encode()


def spectra(n_bytes, seed=0, peaks=8):
    """Spectrum lines, ``id intensity intensity ...``."""
    rng = random.Random(seed)
    lines = []
    size = 0
    i = 0
    while size < n_bytes:
        vals = " ".join("%.3f" % rng.uniform(0, 50) for _ in range(rng.randint(1, peaks)))
        line = "spec%07d %s\n" % (i, vals)
        lines.append(line)
        size += len(line)
        i += 1
    return "".join(lines).encode()


def knn_points(n_test, seed=0, dim=4):
    """Test points ``id<TAB>f1,f2,...``."""
    rng = random.Random(seed)
    return "".join("pt%06d\t%s\n" % (i, ",".join("%.4f" % rng.uniform(0, 10)
                                                for _ in range(dim)))
                   for i in range(n_test)).encode()


def knn_training(n_train, seed=0, dim=4, parts=3, labels=("a", "b", "c"),
                 prefix=KNN_TABLE_PREFIX):
    """Labelled training rows spread over ``parts`` objects under ``prefix``."""
    rng = random.Random(seed + 1)
    rows = [[] for _ in range(parts)]
    for i in range(n_train):
        feats = [rng.uniform(0, 10) for _ in range(dim)]
        label = labels[int(feats[0] * len(labels) / 10) % len(labels)]
        rows[i % parts].append("%s\t%s\n" % (",".join("%.4f" % f for f in feats), label))
    return {f"{prefix}part-{p}": "".join(r).encode() for p, r in enumerate(rows)}


@dataclass(frozen=True)
class App:
    name: str
    build: Callable
    make_input: Callable      # (n_bytes, seed) -> bytes
    make_tables: Callable     # (seed) -> {key: bytes}


def _knn_input(n_bytes, seed=0):
    return knn_points(max(1, n_bytes // 40), seed)


APPS = {
    "compression": App("compression", compression_pipeline, bed_records, lambda seed: {}),
    "proteomics": App("proteomics", proteomics_pipeline, spectra, lambda seed: {}),
    "knn": App("knn", knn_pipeline, _knn_input, lambda seed: knn_training(60, seed)),
}


def get_app(name):
    try:
        return APPS[name]
    except KeyError:
        raise ValueError(f"unknown application {name!r}; expected one of {sorted(APPS)}") \
            from None
