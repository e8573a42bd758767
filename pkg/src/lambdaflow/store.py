"""Object store with write notifications, plus the append-only execution log.

Object keys follow ``<job>/<stage>/<ordinal>-<total>/<name>`` where ``stage``
is a stage id or ``input``.  Writes are immutable.  Every successful ``put``
notifies subscribers synchronously; the orchestrator turns that into an event
on the simulator queue.

On disk the store lives at ``<root>/objects/<urlencoded-key>`` and the log at
``<root>/log.jsonl`` (one JSON object per line).
"""

from __future__ import annotations

import bisect
import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional
from urllib.parse import quote, unquote

from .errors import DuplicateEvent, KeyExists, NotFound

_KEY_RE = re.compile(r"^(?P<job>[^/]+)/(?P<stage>input|\d+)/(?P<ordinal>\d+)-(?P<total>\d+)/(?P<name>.+)$")


def task_prefix(job_id, stage, ordinal, total):
    return f"{job_id}/{stage}/{ordinal}-{total}/"


def stage_prefix(job_id, stage):
    return f"{job_id}/{stage}/"


@dataclass(frozen=True)
class ObjectKey:
    job: str
    stage: Any  # int or "input"
    ordinal: int
    total: int
    name: str


def parse_key(key):
    """Split an object key into its parts, or ``None`` if it is not task-shaped."""
    m = _KEY_RE.match(key)
    if not m:
        return None
    stage = m["stage"]
    return ObjectKey(m["job"], stage if stage == "input" else int(stage),
                     int(m["ordinal"]), int(m["total"]), m["name"])


@dataclass(frozen=True)
class Notification:
    key: str
    at: int


@dataclass(frozen=True)
class ObjectRecord:
    key: str
    data: bytes
    created_at: int


class ObjectStore:
    """In-memory object store.  ``clock`` returns the current virtual time."""

    def __init__(self, clock: Optional[Callable[[], int]] = None):
        self.clock = clock or (lambda: 0)
        self._keys = []
        self._objects = {}
        self._subscribers = []

    # -- notifications

    def subscribe(self, fn):
        self._subscribers.append(fn)

        def unsubscribe():
            if fn in self._subscribers:
                self._subscribers.remove(fn)
        return unsubscribe

    # -- object API

    def put(self, key, data):
        if key in self._objects:
            raise KeyExists(key)
        rec = ObjectRecord(key, bytes(data), self.clock())
        self._write(rec)
        self._objects[key] = rec
        bisect.insort(self._keys, key)
        note = Notification(key, rec.created_at)
        for fn in list(self._subscribers):
            fn(key)
        return note

    def _write(self, rec):
        pass

    def get(self, key):
        try:
            return self._objects[key].data
        except KeyError:
            raise NotFound(key) from None

    def record(self, key):
        try:
            return self._objects[key]
        except KeyError:
            raise NotFound(key) from None

    def exists(self, key):
        return key in self._objects

    def size(self, key):
        return len(self.get(key))

    def list(self, prefix=""):
        if not prefix:
            return list(self._keys)
        lo = bisect.bisect_left(self._keys, prefix)
        out = []
        for k in self._keys[lo:]:
            if not k.startswith(prefix):
                break
            out.append(k)
        return out

    def __len__(self):
        return len(self._objects)


class DiskStore(ObjectStore):
    """Directory-backed store; survives process restarts."""

    def __init__(self, root, clock=None):
        super().__init__(clock)
        self.root = Path(root)
        self.objdir = self.root / "objects"
        self.objdir.mkdir(parents=True, exist_ok=True)
        for p in sorted(self.objdir.iterdir()):
            if p.name.endswith(".tmp"):
                continue
            key = unquote(p.name)
            self._objects[key] = ObjectRecord(key, p.read_bytes(), 0)
            self._keys.append(key)
        self._keys.sort()

    def _write(self, rec):
        path = self.objdir / quote(rec.key, safe="")
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(rec.data)
        os.replace(tmp, path)


# -- execution log -------------------------------------------------------------

LOG_EVENTS = ("submitted", "invoked", "completed", "respawned", "paused",
              "resumed", "done", "failed")
_UNIQUE_EVENTS = frozenset({"submitted", "invoked", "completed", "done", "failed"})


@dataclass(frozen=True)
class LogEntry:
    job_id: str
    stage_id: Optional[int]
    task_id: Optional[int]
    event: str
    at: int
    payload: dict = field(default_factory=dict, compare=False)

    def to_json(self):
        return json.dumps({"job": self.job_id, "stage": self.stage_id, "task": self.task_id,
                           "event": self.event, "at": self.at, "payload": self.payload},
                          sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, line):
        d = json.loads(line)
        return cls(d["job"], d["stage"], d["task"], d["event"], d["at"], d.get("payload") or {})


class ExecutionLog:
    """Append-only log; rejects duplicate invoked/completed events."""

    def __init__(self):
        self._entries = []
        self._seen = set()
        self._by_job = {}

    def _check(self, e):
        if e.event not in LOG_EVENTS:
            raise ValueError(f"unknown log event {e.event!r}")
        if self._entries and e.at < self._entries[-1].at:
            raise ValueError(f"log time went backwards: {e.at} < {self._entries[-1].at}")
        ident = (e.job_id, e.stage_id, e.task_id, e.event)
        if e.event in _UNIQUE_EVENTS and ident in self._seen:
            raise DuplicateEvent(f"{e.event} already logged for {ident[:3]}")
        if e.event == "completed" and (e.job_id, e.stage_id, e.task_id, "invoked") not in self._seen:
            raise ValueError(f"completion logged before invocation for {ident[:3]}")

    def _index(self, e):
        self._entries.append(e)
        self._seen.add((e.job_id, e.stage_id, e.task_id, e.event))
        self._by_job.setdefault(e.job_id, []).append(e)

    def append(self, entry):
        self._check(entry)
        self._persist(entry)
        self._index(entry)
        return entry

    def _persist(self, entry):
        pass

    def has(self, job_id, stage_id, task_id, event):
        return (job_id, stage_id, task_id, event) in self._seen

    def query(self, job_id, stage_id=None):
        entries = self._by_job.get(job_id, [])
        if stage_id is None:
            return list(entries)
        return [e for e in entries if e.stage_id == stage_id]

    def entries(self):
        return list(self._entries)

    def jobs(self):
        return list(self._by_job)

    def __len__(self):
        return len(self._entries)


class DiskLog(ExecutionLog):
    """Newline-delimited JSON log file; entries are flushed before returning."""

    def __init__(self, path, fsync=False):
        super().__init__()
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.fsync = fsync
        if self.path.exists():
            with open(self.path, "r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if line:
                        self._index(LogEntry.from_json(line))
        self._fh = open(self.path, "a", encoding="utf-8")

    def _persist(self, entry):
        self._fh.write(entry.to_json() + "\n")
        self._fh.flush()
        if self.fsync:
            os.fsync(self._fh.fileno())

    def close(self):
        self._fh.close()


def open_disk_backend(root, clock=None, fsync=False):
    """Store and log sharing one directory, as in ``<root>/objects`` + ``<root>/log.jsonl``."""
    return DiskStore(root, clock), DiskLog(Path(root) / "log.jsonl", fsync=fsync)
