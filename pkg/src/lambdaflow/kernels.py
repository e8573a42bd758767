"""Task kernels invoked through the ``run`` stage.

A kernel receives its bound inputs as ``{name: bytes}``, its user arguments,
and the item format, and returns a non-empty list of ``(object_name, bytes)``.
Each kernel also reports a *work* measure used by the duration model
(bytes by default, distance evaluations for ``toy_knn``).
"""

from __future__ import annotations

import zlib
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import KernelError, UnknownApplication


def _bytes_work(inputs, args, fmt):
    return float(sum(len(v) for v in inputs.values()))


@dataclass(frozen=True)
class Kernel:
    name: str
    fn: Callable
    work: Callable = _bytes_work

    def execute(self, inputs, args, fmt):
        try:
            outputs = self.fn(inputs, args, fmt)
        except KernelError:
            raise
        except Exception as exc:
            raise KernelError(f"{self.name}: {exc!r}") from exc
        outputs = list(outputs)
        if not outputs:
            raise KernelError(f"{self.name} produced no outputs")
        for name, data in outputs:
            if not isinstance(name, str) or not name or "/" in name:
                raise KernelError(f"{self.name}: bad output name {name!r}")
            if not isinstance(data, (bytes, bytearray)):
                raise KernelError(f"{self.name}: output {name!r} is not bytes")
        return [(n, bytes(d)) for n, d in outputs]


KERNELS = {}


def register_kernel(name, work=None, registry=None):
    """Decorator registering ``fn`` as the kernel ``name``."""
    reg = KERNELS if registry is None else registry

    def deco(fn):
        reg[name] = Kernel(name, fn, work or _bytes_work)
        return fn
    return deco


def get_kernel(name, registry=None):
    reg = KERNELS if registry is None else registry
    try:
        return reg[name]
    except KeyError:
        raise UnknownApplication(f"no kernel registered as {name!r}") from None


def read_bindings(store, bindings):
    """Fetch bound objects; a key ending in ``/`` concatenates everything under it."""
    inputs = {}
    for name, key in bindings.items():
        if key.endswith("/"):
            inputs[name] = b"".join(store.get(k) for k in store.list(key))
        else:
            inputs[name] = store.get(key)
    return inputs


def _single(inputs):
    return b"".join(inputs[k] for k in sorted(inputs))


# -- identity -------------------------------------------------------------------

@register_kernel("identity")
def identity(inputs, args, fmt):
    return [("identity", _single(inputs))]


# -- run-length compression -------------------------------------------------------

def rle_encode(data):
    """``(count, byte)`` pairs; runs longer than 255 continue in a new pair."""
    a = np.frombuffer(bytes(data), dtype=np.uint8)
    if not len(a):
        return b""
    starts = np.concatenate(([0], np.flatnonzero(a[1:] != a[:-1]) + 1))
    lengths = np.diff(np.append(starts, len(a)))
    pieces = (lengths + 254) // 255
    out = np.empty(2 * int(pieces.sum()), dtype=np.uint8)
    counts = np.full(len(out) // 2, 255, dtype=np.int64)
    counts[np.cumsum(pieces) - 1] = lengths - 255 * (pieces - 1)
    out[0::2] = counts
    out[1::2] = np.repeat(a[starts], pieces)
    return out.tobytes()


def rle_decode(data):
    if len(data) % 2:
        raise ValueError("run-length stream has odd length")
    out = bytearray()
    for k in range(0, len(data), 2):
        out += bytes([data[k + 1]]) * data[k]
    return bytes(out)


@register_kernel("toy_compress")
def toy_compress(inputs, args, fmt):
    return [("compressed.rle", rle_encode(_single(inputs)))]


# -- per-item scoring ---------------------------------------------------------------

def score_item(body):
    fields = body.split()
    if not fields:
        return b"", 0.0
    values = []
    for f in fields[1:]:
        try:
            values.append(float(f))
        except ValueError:
            pass
    if values:
        score = sum(v * v for v in values) / (1 + len(values))
    else:
        score = (zlib.crc32(body) % 10_000) / 100.0
    return fields[0], score


@register_kernel("toy_score")
def toy_score(inputs, args, fmt):
    """Emit ``id<TAB>score`` for every item of the input."""
    lines = []
    for it in fmt.items(_single(inputs)):
        ident, score = score_item(fmt.body(it).rstrip(b"\r"))
        if ident:
            lines.append(ident + b"\t" + f"{score:.6f}".encode() + b"\n")
    return [("scores.tsv", b"".join(lines))]


# -- brute-force nearest neighbours ----------------------------------------------------

def _parse_vectors(blob, with_label):
    ids, rows = [], []
    for line in blob.splitlines():
        if not line.strip():
            continue
        a, b = line.split(b"\t")[:2]
        if with_label:
            rows.append([float(x) for x in a.split(b",")])
            ids.append(b)
        else:
            ids.append(a)
            rows.append([float(x) for x in b.split(b",")])
    return ids, np.array(rows, dtype=np.float64).reshape(len(rows), -1)


def _knn_work(inputs, args, fmt):
    test = inputs.get(args.get("input_key", "input"), b"")
    train = inputs.get(args.get("table_key", "table"), b"")
    return float(max(1, test.count(b"\n")) * max(1, train.count(b"\n")))


@register_kernel("toy_knn", work=_knn_work)
def toy_knn(inputs, args, fmt):
    """For each test vector emit its ``k`` nearest training rows.

    Test lines are ``id<TAB>f1,f2,...``; training lines ``f1,f2,...<TAB>label``.
    Output lines are ``id<TAB>distance<TAB>label``.
    """
    k = int(args.get("k", 3))
    test_ids, test = _parse_vectors(inputs[args.get("input_key", "input")], False)
    labels, train = _parse_vectors(inputs[args.get("table_key", "table")], True)
    out = []
    if len(test_ids) and len(labels):
        d = np.sqrt(((test[:, None, :] - train[None, :, :]) ** 2).sum(axis=2))
        order = np.argsort(d, axis=1, kind="stable")[:, :k]
        for i, ident in enumerate(test_ids):
            for j in order[i]:
                out.append(b"%s\t%.6f\t%s\n" % (ident, d[i, j], labels[j]))
    return [("neighbours.tsv", b"".join(out))]


@register_kernel("knn_vote")
def knn_vote(inputs, args, fmt):
    """Majority label over the ``k`` closest candidates of each test id."""
    k = int(args.get("k", 3))
    groups = {}
    for line in _single(inputs).splitlines():
        if not line.strip():
            continue
        ident, dist, label = line.split(b"\t")
        groups.setdefault(ident, []).append((float(dist), label))
    out = []
    for ident, cands in groups.items():
        best = sorted(cands, key=lambda c: c[0])[:k]
        votes = Counter(label for _, label in best)
        winner = min(votes, key=lambda lab: (-votes[lab], lab))
        out.append(ident + b"\t" + winner + b"\n")
    return [("labels.tsv", b"".join(out))]


def kernel_work(application, inputs, args, fmt, registry=None):
    return get_kernel(application, registry).work(inputs, args, fmt)


def known_kernels(registry: Optional[dict] = None):
    return sorted(KERNELS if registry is None else registry)
