"""The eight data primitives over format-aware blobs.

All functions here are pure: the same inputs always give the same outputs.
The only randomness is the pivot sampler in :func:`partition`, which takes an
explicit seed.
"""

from __future__ import annotations

import bisect
import functools
import math
import posixpath
import random
from dataclasses import dataclass
from typing import Any, Union

from .errors import EmptyMapTable, EmptySample, FormatError, MissingChunk, NoChunks
from .formats import FormatSpec, detect_numeric, get_format, key_function, numeric_value
from .pipeline import DEFAULT_SPLIT_SIZE

MAX_PIVOT_SAMPLE = 10_000


@functools.total_ordering
class _Unbounded:
    """Upper sentinel comparing greater than every key."""

    def __eq__(self, other):
        return isinstance(other, _Unbounded)

    def __lt__(self, other):
        return False

    def __gt__(self, other):
        return not isinstance(other, _Unbounded)

    def __hash__(self):
        return hash("_Unbounded")

    def __repr__(self):
        return "UNBOUNDED"


UNBOUNDED = _Unbounded()


@dataclass(frozen=True)
class Chunk:
    path: str
    stage: Union[int, str]
    ordinal: int
    total: int
    data: bytes

    def __post_init__(self):
        if not 0 <= self.ordinal < self.total:
            raise ValueError(f"ordinal {self.ordinal} outside [0, {self.total})")


@dataclass(frozen=True)
class KeyRange:
    """Half-open key interval ``[lo, hi)``; ``hi`` may be :data:`UNBOUNDED`."""

    lo: Any
    hi: Any

    def __contains__(self, key):
        return self.lo <= key < self.hi

    @property
    def empty(self):
        return not self.lo < self.hi


def chunk_name(ordinal):
    return f"chunk-{ordinal:06d}"


def _chunks(parts, stage, prefix):
    total = len(parts)
    return [Chunk(f"{prefix}{chunk_name(i)}", stage, i, total, data)
            for i, data in enumerate(parts)]


def _fmt(fmt):
    return get_format(fmt) if not isinstance(fmt, FormatSpec) else fmt


def split(blob, fmt, split_size=DEFAULT_SPLIT_SIZE, *, stage=0, prefix=""):
    """Cut ``blob`` at item boundaries into chunks of at most ``split_size`` bytes.

    An item longer than ``split_size`` becomes a chunk of its own.  An empty
    blob yields a single empty chunk so that downstream stages still fire.
    """
    fmt = _fmt(fmt)
    if split_size <= 0:
        raise ValueError("split_size must be positive")
    items = fmt.items(blob)
    parts = []
    cur = []
    size = 0
    for it in items:
        if cur and size + len(it) > split_size:
            parts.append(b"".join(cur))
            cur, size = [], 0
        cur.append(it)
        size += len(it)
    if cur or not parts:
        parts.append(b"".join(cur))
    return _chunks(parts, stage, prefix)


def _check_complete(chunks):
    if not chunks:
        raise NoChunks("no chunks given")
    total = chunks[0].total
    if any(c.total != total or c.stage != chunks[0].stage for c in chunks):
        raise FormatError("chunks come from different stages or totals")
    by_ordinal = {c.ordinal: c for c in chunks}
    for i in range(total):
        if i not in by_ordinal:
            raise MissingChunk(i)
    return [by_ordinal[i] for i in range(total)]


def sort_items(items, fmt, identifier, numeric=None):
    """Stable ascending sort of items by key; returns (items, numeric)."""
    fmt = _fmt(fmt)
    if numeric is None:
        numeric = detect_numeric(fmt, identifier, items)
    keyf = key_function(fmt, identifier, numeric)
    return sorted((fmt.terminate(it) for it in items), key=keyf), numeric


def combine(chunks, fmt, identifier=None):
    """Concatenate chunks in ordinal order, or merge their items by key (stable)."""
    fmt = _fmt(fmt)
    ordered = _check_complete(list(chunks))
    if identifier is None:
        return b"".join(c.data for c in ordered)
    return merge_blobs([c.data for c in ordered], fmt, identifier)


def merge_blobs(blobs, fmt, identifier):
    fmt = _fmt(fmt)
    items = [it for b in blobs for it in fmt.items(b)]
    merged, _ = sort_items(items, fmt, identifier)
    return fmt.join(merged)


def top(blob, fmt, identifier, number):
    """The ``number`` items with the largest keys, in descending key order.

    Equal keys come out in reverse input order, i.e. the result is the tail
    of the stable ascending sort, reversed.
    """
    fmt = _fmt(fmt)
    if number < 1:
        raise ValueError("number must be >= 1")
    items = fmt.items(blob)
    if not items:
        return b""
    asc, _ = sort_items(items, fmt, identifier)
    return fmt.join(asc[::-1][:number])


def chunk_key_sum(blob, fmt, identifier):
    fmt = _fmt(fmt)
    return sum(numeric_value(fmt.field(it, identifier)) for it in fmt.items(blob))


def match(chunks, fmt, identifier, find):
    """Path of the chunk whose key sum is extremal; ties go to the smallest path.

    ``chunks`` is a sequence of :class:`Chunk` or ``(path, bytes)`` pairs.
    """
    fmt = _fmt(fmt)
    pairs = [(c.path, c.data) if isinstance(c, Chunk) else tuple(c) for c in chunks]
    if not pairs:
        raise NoChunks("match needs at least one chunk")
    if find not in ("highest_sum", "lowest_sum"):
        raise ValueError(f"unsupported find property {find!r}")
    sign = -1 if find == "highest_sum" else 1
    scored = [(sign * chunk_key_sum(data, fmt, identifier), path) for path, data in pairs]
    return min(scored)[1]


def map_payloads(item_chunks, map_table, input_key, table_key, directories=False):
    """Cross product of item chunks with map-table entries.

    ``map_table`` lists object keys.  With ``directories`` the entries are
    grouped by parent directory and each payload binds a directory prefix.
    """
    entries = list(map_table)
    if directories:
        entries = sorted({posixpath.dirname(k.rstrip("/")) + "/" for k in entries})
    if not entries:
        raise EmptyMapTable("map table lists no objects")
    return [{input_key: chunk, table_key: entry}
            for chunk in item_chunks for entry in entries]


def pivots_for(items, fmt, identifier, n, *, seed=0, max_sample=MAX_PIVOT_SAMPLE):
    """Pivot keys splitting ``items`` into ``n`` ranges; returns (lo, pivots, numeric)."""
    fmt = _fmt(fmt)
    if n < 1:
        raise ValueError("n must be >= 1")
    if not items:
        raise EmptySample("cannot partition an empty sample")
    sample = list(items)
    if len(sample) > max_sample:
        sample = random.Random(seed).sample(sample, max_sample)
    numeric = detect_numeric(fmt, identifier, sample)
    keyf = key_function(fmt, identifier, numeric)
    keys = sorted(keyf(it) for it in sample)
    m = len(keys)
    pivots = [keys[i * m // n] for i in range(1, n)]
    return keys[0], pivots, numeric


def partition(blob_sample, fmt, identifier, n, *, seed=0, max_sample=MAX_PIVOT_SAMPLE):
    """``n`` disjoint half-open key ranges at equally spaced order statistics."""
    fmt = _fmt(fmt)
    items = fmt.items(blob_sample) if isinstance(blob_sample, (bytes, bytearray)) \
        else list(blob_sample)
    lo, pivots, _ = pivots_for(items, fmt, identifier, n, seed=seed, max_sample=max_sample)
    bounds = [lo, *pivots, UNBOUNDED]
    return [KeyRange(bounds[i], bounds[i + 1]) for i in range(n)]


def range_index(key, pivots):
    return bisect.bisect_right(pivots, key)


def bucket_items(items, fmt, identifier, pivots, numeric):
    """Distribute items over ``len(pivots) + 1`` ranges, keeping input order."""
    keyf = key_function(fmt, identifier, numeric)
    buckets = [[] for _ in range(len(pivots) + 1)]
    for it in items:
        buckets[range_index(keyf(it), pivots)].append(it)
    return buckets


def sort(blob, fmt, identifier, split_size=DEFAULT_SPLIT_SIZE, *, stage=0, prefix="", seed=0):
    """Radix-style sort: pivot, bucket by range, sort each bucket.

    Chunk ``i`` holds exactly the items of range ``i``; concatenating the
    chunks gives the stable sort of the input items.
    """
    fmt = _fmt(fmt)
    items = fmt.items(blob)
    if not items:
        return _chunks([b""], stage, prefix)
    n = max(1, math.ceil(len(blob) / split_size))
    _, pivots, numeric = pivots_for(items, fmt, identifier, n, seed=seed)
    parts = []
    for bucket in bucket_items(items, fmt, identifier, pivots, numeric):
        ordered, _ = sort_items(bucket, fmt, identifier, numeric)
        parts.append(fmt.join(ordered))
    return _chunks(parts, stage, prefix)


def run(store, bindings, application, args=None, *, prefix, fmt="new_line",
        output_format=None, kernels=None):
    """Execute a registered task kernel and write its outputs under ``prefix``.

    ``bindings`` maps kernel input names to object keys (a key ending in ``/``
    binds every object under that prefix).  Returns the written keys.
    """
    from .kernels import get_kernel, read_bindings
    kernel = get_kernel(application, kernels)
    inputs = read_bindings(store, bindings)
    outputs = kernel.execute(inputs, dict(args or {}), _fmt(fmt))
    paths = []
    for name, data in outputs:
        key = prefix + name
        store.put(key, data)
        paths.append(key)
    return paths


# -- pivot (de)serialization for task payloads ----------------------------------

def encode_key(key):
    if isinstance(key, bytes):
        return key.decode("latin-1")
    return key


def decode_key(value, numeric):
    if numeric:
        return value
    return value.encode("latin-1")
