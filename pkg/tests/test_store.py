import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lambdaflow import errors
from lambdaflow.store import (
    DiskLog, DiskStore, ExecutionLog, LogEntry, ObjectStore, open_disk_backend, parse_key,
    task_prefix,
)


def test_put_get_and_immutability():
    s = ObjectStore()
    s.put("j/0/0-1/a", b"x")
    assert s.get("j/0/0-1/a") == b"x"
    with pytest.raises(errors.KeyExists):
        s.put("j/0/0-1/a", b"y")
    with pytest.raises(errors.NotFound):
        s.get("missing")


def test_list_sorted_under_prefix():
    s = ObjectStore()
    for k in ("job1/stage0/c", "job1/stage0/a", "job1/stage1/a", "job1/stage0/b"):
        s.put(k, b"")
    assert s.list("job1/stage0/") == ["job1/stage0/a", "job1/stage0/b", "job1/stage0/c"]
    assert s.list("nothing/") == []
    assert ObjectStore().list("") == []


def test_one_notification_per_put():
    s = ObjectStore(clock=lambda: 42)
    seen = []
    unsubscribe = s.subscribe(seen.append)
    note = s.put("j/0/0-1/a", b"")
    assert seen == ["j/0/0-1/a"] and note.at == 42
    unsubscribe()
    s.put("j/0/0-1/b", b"")
    assert seen == ["j/0/0-1/a"]


def test_key_parsing():
    k = parse_key("job-0001/3/2-5/part-000002")
    assert (k.job, k.stage, k.ordinal, k.total, k.name) == ("job-0001", 3, 2, 5, "part-000002")
    assert parse_key("job/input/0-1/data.bed").stage == "input"
    assert parse_key("tables/knn/part-0") is None
    assert task_prefix("j", 1, 0, 2) == "j/1/0-2/"


def test_log_order_and_dedup():
    log = ExecutionLog()
    log.append(LogEntry("j", 0, 0, "invoked", 0, {"inputs": ["a"]}))
    log.append(LogEntry("j", 0, 0, "completed", 5))
    assert [e.event for e in log.query("j")] == ["invoked", "completed"]
    with pytest.raises(errors.DuplicateEvent):
        log.append(LogEntry("j", 0, 0, "invoked", 6))
    log.append(LogEntry("j", 0, 1, "invoked", 6))
    log.append(LogEntry("j", 0, 1, "respawned", 7))
    log.append(LogEntry("j", 0, 1, "respawned", 8))
    assert len(log.query("j", 0)) == 5
    with pytest.raises(ValueError):
        log.append(LogEntry("j", 0, 2, "completed", 9))
    with pytest.raises(ValueError):
        log.append(LogEntry("j", 0, 3, "invoked", 1))


def test_disk_backend_survives_restart(tmp_path):
    store, log = open_disk_backend(tmp_path)
    store.put("j/0/0-1/weird name?&", b"payload")
    log.append(LogEntry("j", None, None, "submitted", 0, {"input_key": "x"}))
    log.append(LogEntry("j", 0, 0, "invoked", 3, {"inputs": ["x"]}))
    log.close()
    store2 = DiskStore(tmp_path)
    log2 = DiskLog(tmp_path / "log.jsonl")
    assert store2.get("j/0/0-1/weird name?&") == b"payload"
    assert log2.entries() == log.entries()
    assert log2.query("j")[1].payload == {"inputs": ["x"]}
    with pytest.raises(errors.DuplicateEvent):
        log2.append(LogEntry("j", 0, 0, "invoked", 4))
    lines = (tmp_path / "log.jsonl").read_text().splitlines()
    assert len(lines) == 2
    assert list((tmp_path / "objects").iterdir())


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.text("ab/", min_size=1, max_size=6), st.binary(max_size=4)),
                max_size=30, unique_by=lambda kv: kv[0]))
def test_list_matches_brute_force(items):
    s = ObjectStore()
    for k, v in items:
        s.put(k, v)
    for prefix in ("", "a", "a/", "b", "ab"):
        assert s.list(prefix) == sorted(k for k, _ in items if k.startswith(prefix))
