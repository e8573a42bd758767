import json
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lambdaflow import errors
from lambdaflow.pipeline import (
    STAGE_PARAMS, Pipeline, StageSpec, add_stage, compile_pipeline, from_builder_document,
    load, new_pipeline, normalize,
)

GOLDEN = Path(__file__).parent / "golden" / "compression.json"


def compression_spec():
    return (Pipeline("compression", "store://bucket", "store://log", 600,
                     {"memory_size": 2240})
            .input("new_line")
            .sort("start_position", params={"split_size": 500_000_000},
                  config={"memory_size": 3008})
            .run("compress_methyl", params={"pbucket": "store://my-program"}))


def test_new_pipeline_starts_empty():
    spec = new_pipeline("compression", "store://bucket", "store://log", 600,
                        {"memory_size": 2240})
    assert spec.stages == [] and spec.input_format is None
    assert spec.default_config.memory_size == 2240


@pytest.mark.parametrize("kwargs,exc", [
    (dict(timeout=0), errors.InvalidTimeout),
    (dict(timeout=-1), errors.InvalidTimeout),
    (dict(log="store://bucket"), errors.InvalidUri),
    (dict(table="not a uri"), errors.InvalidUri),
    (dict(config={"memory_size": 64}), errors.InvalidConfig),
    (dict(config={"memory_size": 4096}), errors.InvalidConfig),
    (dict(config={"region": ""}), errors.InvalidConfig),
])
def test_new_pipeline_rejects(kwargs, exc):
    args = dict(name="p", table="store://bucket", log="store://log", timeout=600, config=None)
    args.update(kwargs)
    with pytest.raises(exc):
        Pipeline(**args)


def test_compile_matches_golden_document():
    compiled, data = compile_pipeline(compression_spec())
    assert data == GOLDEN.read_bytes()
    doc = json.loads(data)
    assert doc["schema_version"] == 1
    assert [s["trigger"] for s in doc["stages"]] == ["input", 0]
    assert [s["kind"] for s in doc["stages"]] == ["sort", "run"]
    assert doc["stages"][0]["config"] == {"memory_size": 3008}
    assert doc["stages"][1]["config"] == {"memory_size": 2240}


def test_compile_writes_file_and_is_byte_stable(tmp_path):
    a = compression_spec().compile(tmp_path / "a" / "c.json")
    b = compression_spec().compile(tmp_path / "b.json")
    assert (tmp_path / "a" / "c.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    assert a.to_json() == b.to_json()


def test_top_missing_number():
    spec = Pipeline("p", "store://a", "store://b", 60).input("tsv")
    with pytest.raises(errors.MissingParam) as ei:
        add_stage(spec, StageSpec("top", {"identifier": 1}))
    assert ei.value.name == "number"


def test_unknown_param_and_kind():
    spec = Pipeline("p", "store://a", "store://b", 60)
    with pytest.raises(errors.UnknownParam):
        spec.split(params={"lines": 3})
    with pytest.raises(errors.UnknownKind):
        add_stage(spec, StageSpec("reduce", {}))
    with pytest.raises(errors.InvalidParam):
        spec.split(params={"split_size": 0})
    with pytest.raises(errors.InvalidParam):
        spec.match("median", 1)


def test_compile_preconditions():
    spec = Pipeline("p", "store://a", "store://b", 60)
    with pytest.raises(errors.EmptyPipeline):
        compile_pipeline(spec.input("new_line"))
    with pytest.raises(errors.NoInputFormat):
        compile_pipeline(spec.split())


def test_load_errors():
    data = GOLDEN.read_bytes()
    with pytest.raises(errors.Malformed):
        load(data[: len(data) // 2])
    doc = json.loads(data)
    doc["schema_version"] += 1
    with pytest.raises(errors.SchemaMismatch):
        load(json.dumps(doc))
    doc = json.loads(data)
    doc["stages"][1]["trigger"] = "input"
    with pytest.raises(errors.Malformed):
        load(json.dumps(doc))


def test_builder_document_equals_fluent_api():
    doc = {
        "name": "compression", "table": "store://bucket", "log": "store://log",
        "timeout": 600, "config": {"memory_size": 2240}, "input_format": "new_line",
        "stages": [
            {"kind": "sort", "identifier": "start_position", "split_size": 500_000_000,
             "config": {"memory_size": 3008}},
            {"kind": "run", "application": "compress_methyl",
             "params": {"pbucket": "store://my-program"}},
        ],
    }
    assert compile_pipeline(from_builder_document(doc))[1] == GOLDEN.read_bytes()


def test_defaults_filled_by_normalize():
    spec = Pipeline("p", "store://a", "store://b", 30).input("new_line").split().run("identity")
    n = normalize(spec)
    assert n.stages[0].params == {"split_size": 1_000_000}
    assert n.stages[1].params == {"application": "identity", "args": {}}
    assert [s.timeout for s in n.stages] == [30, 30]


def test_stage_timeout_override():
    spec = (Pipeline("p", "store://a", "store://b", 30).input("new_line")
            .split(timeout=5).combine())
    c = spec.compile()
    assert [s.timeout for s in c.stages] == [5, 30]
    with pytest.raises(errors.InvalidTimeout):
        spec.split(timeout=0)


# -- properties ------------------------------------------------------------------------

_VALUES = {
    "split_size": st.integers(1, 10**9),
    "identifier": st.one_of(st.integers(0, 8), st.sampled_from(["start_position", "score"])),
    "number": st.integers(1, 100),
    "find": st.sampled_from(["highest_sum", "lowest_sum"]),
    "input_key": st.sampled_from(["input", "x"]),
    "table_key": st.sampled_from(["table", "y"]),
    "map_table": st.sampled_from(["tables/a/", "tables/b"]),
    "directories": st.booleans(),
    "application": st.sampled_from(["identity", "toy_score"]),
    "output_format": st.sampled_from(["new_line", "tsv"]),
    "args": st.dictionaries(st.sampled_from(["k", "n"]), st.integers(0, 9), max_size=2),
}


@st.composite
def stage_specs(draw):
    kind = draw(st.sampled_from(sorted(STAGE_PARAMS)))
    required, optional = STAGE_PARAMS[kind]
    names = list(required) + [o for o in optional if draw(st.booleans())]
    params = {n: draw(_VALUES[n]) for n in names}
    config = draw(st.one_of(st.none(), st.builds(lambda m: {"memory_size": m},
                                                 st.integers(128, 3008))))
    return StageSpec(kind, params, config)


@st.composite
def pipelines(draw):
    spec = Pipeline(draw(st.sampled_from(["a", "job_1", "x.y"])), "store://t", "store://l",
                    draw(st.integers(1, 900)),
                    {"memory_size": draw(st.integers(128, 3008))})
    spec = spec.input(draw(st.sampled_from(["new_line", "tsv"])))
    for stage in draw(st.lists(stage_specs(), min_size=1, max_size=6)):
        spec = add_stage(spec, stage)
    return spec


@settings(max_examples=200, deadline=None)
@given(pipelines())
def test_round_trip_property(spec):
    compiled, data = compile_pipeline(spec)
    loaded = load(data)
    assert loaded.pipeline == normalize(spec)
    assert loaded.to_json() == data
    assert compile_pipeline(spec)[1] == data


@settings(max_examples=200, deadline=None)
@given(stage_specs(), st.data())
def test_dropping_a_required_param_is_rejected(stage, data):
    required, _ = STAGE_PARAMS[stage.kind]
    if not required:
        return
    drop = data.draw(st.sampled_from(required))
    params = {k: v for k, v in stage.params.items() if k != drop}
    with pytest.raises(errors.MissingParam):
        StageSpec(stage.kind, params)
