"""Declarative pipeline construction and the canonical JSON document.

A pipeline is a linear chain of stages.  Each stage names one of the eight
primitives and carries exactly the arguments that primitive accepts::

    pipeline = Pipeline(name="compression", table="store://bucket",
                        log="store://log", timeout=600,
                        config={"memory_size": 2240})
    step = pipeline.input(format="new_line")
    step = step.sort(identifier="start_position",
                     params={"split_size": 500 * 1000 * 1000},
                     config={"memory_size": 3008})
    step = step.run("compress_methyl", params={"pbucket": "s3://my-program"})
    step.compile("json/compile.json")

Every builder call returns a new :class:`PipelineSpec`; specs are plain values.
"""

from __future__ import annotations

import dataclasses
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

from .errors import (
    EmptyPipeline, InvalidConfig, InvalidParam, InvalidTimeout, InvalidUri,
    Malformed, MissingParam, NoInputFormat, SchemaMismatch, UnknownKind,
    UnknownParam,
)

SCHEMA_VERSION = 1
DEFAULT_SPLIT_SIZE = 1_000_000
MIN_MEMORY_MB = 128
MAX_MEMORY_MB = 3008

FIND_PROPERTIES = ("highest_sum", "lowest_sum")

# kind -> (required params, optional params)
STAGE_PARAMS = {
    "split": ((), ("split_size",)),
    "combine": ((), ("identifier",)),
    "top": (("identifier", "number"), ()),
    "match": (("find", "identifier"), ()),
    "map": (("input_key", "map_table", "table_key"), ("directories",)),
    "sort": (("identifier",), ("split_size",)),
    "partition": (("identifier",), ("split_size",)),
    "run": (("application",), ("output_format", "args")),
}
STAGE_KINDS = tuple(STAGE_PARAMS)
FAN_IN_KINDS = frozenset({"combine", "top", "match", "partition"})
PHASE_KINDS = frozenset({"split", "sort", "partition"})

_PARAM_DEFAULTS = {
    "split": {"split_size": DEFAULT_SPLIT_SIZE},
    "sort": {"split_size": DEFAULT_SPLIT_SIZE},
    "partition": {"split_size": DEFAULT_SPLIT_SIZE},
    "map": {"directories": False},
    "run": {"args": {}},
}

_URI_RE = re.compile(r"^[A-Za-z][A-Za-z0-9+.\-]*://[^\s/][^\s]*$")
_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_.\-]*$")


def _check_uri(uri):
    if not isinstance(uri, str) or not _URI_RE.match(uri):
        raise InvalidUri(f"malformed storage URI: {uri!r}")
    return uri


def _canon_number(x):
    if isinstance(x, bool):
        return x
    if isinstance(x, float) and x.is_integer():
        return int(x)
    return x


@dataclass(frozen=True)
class FunctionConfig:
    memory_size: int = 1024
    region: Optional[str] = None
    role: Optional[str] = None

    def __post_init__(self):
        mem = self.memory_size
        if isinstance(mem, bool) or not isinstance(mem, int):
            raise InvalidConfig(f"memory_size must be an integer, got {mem!r}")
        if not MIN_MEMORY_MB <= mem <= MAX_MEMORY_MB:
            raise InvalidConfig(
                f"memory_size {mem} outside [{MIN_MEMORY_MB}, {MAX_MEMORY_MB}]")
        for name in ("region", "role"):
            value = getattr(self, name)
            if value is not None and (not isinstance(value, str) or not value):
                raise InvalidConfig(f"{name} must be a non-empty string when set")

    @classmethod
    def from_dict(cls, d):
        if d is None:
            return cls()
        if isinstance(d, FunctionConfig):
            return d
        unknown = set(d) - {"memory_size", "region", "role"}
        if unknown:
            raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")
        return cls(**{k: _canon_number(v) for k, v in d.items()})

    def merged(self, override):
        """Return this config with the keys of ``override`` replaced."""
        if not override:
            return self
        unknown = set(override) - {"memory_size", "region", "role"}
        if unknown:
            raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")
        return dataclasses.replace(
            self, **{k: _canon_number(v) for k, v in override.items()})

    def to_dict(self):
        return {k: v for k, v in dataclasses.asdict(self).items() if v is not None}


def validate_params(kind, params):
    """Check ``params`` against the argument table for ``kind``."""
    if kind not in STAGE_PARAMS:
        raise UnknownKind(f"unknown stage kind {kind!r}; expected one of {STAGE_KINDS}")
    required, optional = STAGE_PARAMS[kind]
    for name in params:
        if name not in required and name not in optional:
            raise UnknownParam(name)
    for name in required:
        if name not in params:
            raise MissingParam(name)

    for name, value in params.items():
        if name == "split_size":
            if isinstance(value, bool) or not isinstance(value, int) or value <= 0:
                raise InvalidParam(f"split_size must be a positive integer, got {value!r}")
        elif name == "number":
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise InvalidParam(f"number must be an integer >= 1, got {value!r}")
        elif name == "identifier":
            if isinstance(value, bool) or not isinstance(value, (int, str)) or value == "":
                raise InvalidParam(f"identifier must be a field name or index, got {value!r}")
        elif name == "find":
            if value not in FIND_PROPERTIES:
                raise InvalidParam(f"find must be one of {FIND_PROPERTIES}, got {value!r}")
        elif name == "directories":
            if not isinstance(value, bool):
                raise InvalidParam("directories must be a boolean")
        elif name == "args":
            if not isinstance(value, dict):
                raise InvalidParam("args must be a mapping")
        elif name in ("application", "output_format", "input_key", "table_key", "map_table"):
            if not isinstance(value, str) or not value:
                raise InvalidParam(f"{name} must be a non-empty string")


@dataclass
class StageSpec:
    kind: str
    params: dict = field(default_factory=dict)
    config_override: Optional[dict] = None
    timeout: Optional[float] = None

    def __post_init__(self):
        self.params = {k: _canon_number(v) for k, v in dict(self.params).items()}
        validate_params(self.kind, self.params)
        if self.config_override is not None:
            # validates keys and bounds
            FunctionConfig().merged(self.config_override)
            self.config_override = {k: _canon_number(v)
                                    for k, v in self.config_override.items()}
        if self.timeout is not None:
            self.timeout = _canon_number(self.timeout)
            if isinstance(self.timeout, bool) or not self.timeout > 0:
                raise InvalidTimeout(f"stage timeout must be > 0, got {self.timeout!r}")


@dataclass
class PipelineSpec:
    name: str
    table: str
    log: str
    timeout: float
    default_config: FunctionConfig = field(default_factory=FunctionConfig)
    input_format: Optional[str] = None
    stages: list = field(default_factory=list)

    # -- fluent builder mirroring the user-facing API ---------------------

    def input(self, format):
        return dataclasses.replace(self, input_format=format)

    def _add(self, kind, params, config=None, timeout=None):
        return add_stage(self, StageSpec(kind, params, config, timeout))

    def split(self, params=None, config=None, timeout=None):
        return self._add("split", dict(params or {}), config, timeout)

    def combine(self, identifier=None, config=None, timeout=None):
        params = {} if identifier is None else {"identifier": identifier}
        return self._add("combine", params, config, timeout)

    def top(self, identifier, number, config=None, timeout=None):
        return self._add("top", {"identifier": identifier, "number": number}, config, timeout)

    def match(self, find, identifier, config=None, timeout=None):
        return self._add("match", {"find": find, "identifier": identifier}, config, timeout)

    def map(self, map_table, input_key, table_key, directories=None, config=None, timeout=None):
        params = {"map_table": map_table, "input_key": input_key, "table_key": table_key}
        if directories is not None:
            params["directories"] = directories
        return self._add("map", params, config, timeout)

    def sort(self, identifier, params=None, config=None, timeout=None):
        return self._add("sort", {"identifier": identifier, **(params or {})}, config, timeout)

    def partition(self, identifier, params=None, config=None, timeout=None):
        return self._add("partition", {"identifier": identifier, **(params or {})},
                         config, timeout)

    def run(self, application, params=None, output_format=None, config=None, timeout=None):
        p = {"application": application}
        if params:
            p["args"] = dict(params)
        if output_format is not None:
            p["output_format"] = output_format
        return self._add("run", p, config, timeout)

    def compile(self, path=None):
        compiled, data = compile_pipeline(self)
        if path is not None:
            path = Path(path)
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(data)
        return compiled


def new_pipeline(name, table, log, timeout, default_config=None):
    if not isinstance(name, str) or not _NAME_RE.match(name):
        raise Malformed(f"pipeline name must be an identifier, got {name!r}")
    _check_uri(table)
    _check_uri(log)
    if table == log:
        raise InvalidUri("table and log must be distinct locations")
    if isinstance(timeout, bool) or not isinstance(timeout, (int, float)) or not timeout > 0:
        raise InvalidTimeout(f"timeout must be > 0, got {timeout!r}")
    return PipelineSpec(name=name, table=table, log=log, timeout=_canon_number(timeout),
                        default_config=FunctionConfig.from_dict(default_config))


def Pipeline(name, table, log, timeout, config=None):
    """Constructor alias matching the user-facing builder spelling."""
    return new_pipeline(name, table, log, timeout, config)


def add_stage(spec, stage):
    if not isinstance(stage, StageSpec):
        raise TypeError("stage must be a StageSpec")
    validate_params(stage.kind, stage.params)
    return dataclasses.replace(spec, stages=[*spec.stages, stage])


def normalize(spec):
    """Fill optional-parameter defaults and resolve per-stage configs and timeouts."""
    stages = []
    for st in spec.stages:
        params = {**_PARAM_DEFAULTS.get(st.kind, {}), **st.params}
        if "args" in params:
            params["args"] = dict(params["args"])
        cfg = spec.default_config.merged(st.config_override).to_dict()
        stages.append(StageSpec(st.kind, params, cfg,
                                st.timeout if st.timeout is not None else spec.timeout))
    return dataclasses.replace(spec, stages=stages)


@dataclass
class CompiledPipeline:
    schema_version: int
    pipeline: PipelineSpec
    stage_ids: list
    triggers: list

    @property
    def stages(self):
        return self.pipeline.stages

    @property
    def name(self):
        return self.pipeline.name

    def stage_format(self, stage_id):
        """Item format of the objects *consumed* by ``stage_id``."""
        fmt = self.pipeline.input_format
        for st in self.pipeline.stages[:stage_id]:
            if st.kind == "run" and st.params.get("output_format"):
                fmt = st.params["output_format"]
        return fmt

    def output_format(self):
        return self.stage_format(len(self.pipeline.stages))

    def phase_stages(self):
        """Ids of stages whose parallelism is driven by ``split_size``."""
        return [i for i, st in enumerate(self.pipeline.stages) if st.kind in PHASE_KINDS]

    def with_split_sizes(self, sizes):
        """Copy with ``split_size`` overridden per stage id (``{stage_id: bytes}``)."""
        stages = []
        for i, st in enumerate(self.pipeline.stages):
            if i in sizes:
                st = StageSpec(st.kind, {**st.params, "split_size": int(sizes[i])},
                               st.config_override, st.timeout)
            stages.append(st)
        return dataclasses.replace(
            self, pipeline=dataclasses.replace(self.pipeline, stages=stages))

    def to_document(self):
        p = self.pipeline
        return {
            "schema_version": self.schema_version,
            "pipeline": {
                "name": p.name,
                "table": p.table,
                "log": p.log,
                "timeout": p.timeout,
                "config": p.default_config.to_dict(),
                "input_format": p.input_format,
            },
            "stages": [
                {
                    "id": sid,
                    "kind": st.kind,
                    "params": st.params,
                    "config": st.config_override,
                    "timeout": st.timeout,
                    "trigger": trig,
                }
                for sid, st, trig in zip(self.stage_ids, p.stages, self.triggers)
            ],
        }

    def to_json(self):
        return canonical_json(self.to_document())


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"),
                      ensure_ascii=False, allow_nan=False).encode("utf-8")


def _compiled_from_normalized(spec):
    n = len(spec.stages)
    return CompiledPipeline(
        schema_version=SCHEMA_VERSION,
        pipeline=spec,
        stage_ids=list(range(n)),
        triggers=["input"] + list(range(n - 1)),
    )


def compile_pipeline(spec):
    """Validate and compile ``spec``; returns ``(CompiledPipeline, json_bytes)``."""
    if not spec.stages:
        raise EmptyPipeline("pipeline has no stages")
    if not spec.input_format:
        raise NoInputFormat("pipeline input format was never declared")
    for st in spec.stages:
        validate_params(st.kind, st.params)
    compiled = _compiled_from_normalized(normalize(spec))
    return compiled, compiled.to_json()


def load(data: Union[bytes, str]) -> CompiledPipeline:
    """Parse a compiled pipeline document."""
    try:
        doc = json.loads(data)
    except (ValueError, UnicodeDecodeError) as exc:
        raise Malformed(f"not a JSON document: {exc}") from None
    if not isinstance(doc, dict) or "schema_version" not in doc:
        raise Malformed("document lacks schema_version")
    if doc["schema_version"] != SCHEMA_VERSION:
        raise SchemaMismatch(
            f"schema_version {doc['schema_version']!r} != supported {SCHEMA_VERSION}")
    try:
        p = doc["pipeline"]
        spec = new_pipeline(p["name"], p["table"], p["log"], p["timeout"], p.get("config"))
        spec = dataclasses.replace(spec, input_format=p.get("input_format"))
        stages = []
        for i, sd in enumerate(doc["stages"]):
            if sd["id"] != i:
                raise Malformed("stage ids must be dense and ordered")
            expected = "input" if i == 0 else i - 1
            if sd["trigger"] != expected:
                raise Malformed(f"stage {i} trigger {sd['trigger']!r} != {expected!r}")
            stages.append(StageSpec(sd["kind"], sd["params"], sd.get("config"),
                                    sd.get("timeout")))
    except (KeyError, TypeError, AttributeError) as exc:
        raise Malformed(f"invalid pipeline document: {exc!r}") from None
    spec = dataclasses.replace(spec, stages=stages)
    if not spec.stages:
        raise EmptyPipeline("pipeline has no stages")
    if not spec.input_format:
        raise NoInputFormat("pipeline input format was never declared")
    return _compiled_from_normalized(normalize(spec))


def load_file(path):
    return load(Path(path).read_bytes())


def from_builder_document(doc: dict[str, Any]) -> PipelineSpec:
    """Build a spec from the flat front-end JSON form.

    ``{"name", "table", "log", "timeout", "config", "input_format",
    "stages": [{"kind": ..., <params>..., "config": {...}, "timeout": ...}]}``
    """
    try:
        spec = new_pipeline(doc["name"], doc["table"], doc["log"], doc["timeout"],
                            doc.get("config"))
    except KeyError as exc:
        raise Malformed(f"builder document lacks {exc}") from None
    if doc.get("input_format") is not None:
        spec = spec.input(doc["input_format"])
    for sd in doc.get("stages", []):
        sd = dict(sd)
        kind = sd.pop("kind", None)
        config = sd.pop("config", None)
        timeout = sd.pop("timeout", None)
        if kind == "run" and "params" in sd:
            sd["args"] = sd.pop("params")
        spec = add_stage(spec, StageSpec(kind, sd, config, timeout))
    return spec
