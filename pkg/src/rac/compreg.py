"""Compensation pairs: which tool undoes which, and where its inputs come from.

Resolution precedence for a forward tool:

1. the framework API configuration (:class:`ApiConfig`),
2. the ``x-compensation-tool`` annotation on its MCP tool definition,
3. the advisor,

and if none of them knows a compensation the tool is assumed to have no side
effects.

Input mappings use a small string grammar, also accepted in the
``input-mapping`` MCP annotation::

    booking_ref=result.confirmation_ref;passenger=params.passenger_id

Paths are dot-separated; integer segments index into lists.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence, Union

from rac.advisor import ABSTAIN, Advisor, AdvisorQuery, DiscoveredCompensation, QueryKind
from rac.txlog import Status, ToolCallRecord

logger = logging.getLogger(__name__)

COMPENSATION_KEY = "x-compensation-tool"
MAPPING_KEY = "input-mapping"


class Provenance(str, Enum):
    API_CONFIG = "API_CONFIG"
    MCP_ANNOTATION = "MCP_ANNOTATION"
    ADVISOR = "ADVISOR"
    ASSUMED_NO_SIDE_EFFECTS = "ASSUMED_NO_SIDE_EFFECTS"


class ResolutionError(ValueError):
    pass


class MappingSyntaxError(ValueError):
    pass


class MCPParseError(ValueError):
    def __init__(self, index: int, message: str) -> None:
        super().__init__(f"tool entry {index}: {message}")
        self.index = index


class ExtractionError(Exception):
    def __init__(self, record_id: int, param: str, message: str) -> None:
        super().__init__(f"record {record_id}: cannot derive {param!r}: {message}")
        self.record_id = record_id
        self.param = param


# -- mapping rules ---------------------------------------------------------


@dataclass(frozen=True)
class ForwardParam:
    name: str

    def __str__(self) -> str:
        return f"params.{self.name}"


@dataclass(frozen=True)
class ForwardResultPath:
    path: str

    def __str__(self) -> str:
        return f"result.{self.path}"


@dataclass(frozen=True)
class AdvisorInferred:
    def __str__(self) -> str:
        return "advisor"


Source = Union[ForwardParam, ForwardResultPath, AdvisorInferred]


@dataclass(frozen=True)
class MappingRule:
    param: str
    source: Source


def parse_source(expr: str) -> ForwardParam | ForwardResultPath:
    origin, dot, path = expr.strip().partition(".")
    if not dot or not path or any(not seg for seg in path.split(".")):
        raise MappingSyntaxError(f"bad source {expr!r}: expected params.<name> or result.<path>")
    if origin == "params":
        return ForwardParam(path)
    if origin == "result":
        return ForwardResultPath(path)
    raise MappingSyntaxError(f"bad source {expr!r}: origin must be 'params' or 'result'")


def parse_input_mapping(text: str) -> tuple[MappingRule, ...]:
    rules: list[MappingRule] = []
    seen: set[str] = set()
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        param, eq, expr = chunk.partition("=")
        param = param.strip()
        if not eq or not param.isidentifier():
            raise MappingSyntaxError(f"bad mapping clause {chunk!r}: expected <param>=<source>")
        if param in seen:
            raise MappingSyntaxError(f"parameter {param!r} mapped twice")
        seen.add(param)
        rules.append(MappingRule(param, parse_source(expr)))
    return tuple(rules)


def format_input_mapping(rules: Iterable[MappingRule]) -> str:
    parts = []
    for rule in rules:
        if isinstance(rule.source, AdvisorInferred):
            raise MappingSyntaxError(f"{rule.param}: advisor-inferred rules have no string form")
        parts.append(f"{rule.param}={rule.source}")
    return ";".join(parts)


def read_path(value: Any, path: str) -> Any:
    """Follow a dotted path; raises KeyError when it leads nowhere."""
    cur = value
    for seg in path.split("."):
        if isinstance(cur, Mapping) and seg in cur:
            cur = cur[seg]
        elif isinstance(cur, list) and seg.lstrip("-").isdigit() and -len(cur) <= int(seg) < len(cur):
            cur = cur[int(seg)]
        else:
            raise KeyError(path)
    return cur


# -- tool definitions --------------------------------------------------------


@dataclass(frozen=True)
class ToolDefinition:
    name: str
    description: str = ""
    input_schema: dict[str, Any] = field(default_factory=lambda: {"type": "object", "properties": {}})
    annotations: dict[str, Any] = field(default_factory=dict)

    @property
    def properties(self) -> dict[str, Any]:
        return self.input_schema.get("properties") or {}

    @property
    def required(self) -> list[str]:
        return list(self.input_schema.get("required") or [])

    @property
    def compensation_tool(self) -> str | None:
        return self.annotations.get(COMPENSATION_KEY)

    @property
    def input_mapping(self) -> str | None:
        return self.annotations.get(MAPPING_KEY)

    def to_mcp(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "description": self.description,
            "inputSchema": self.input_schema,
            "annotations": self.annotations,
        }


def parse_mcp_tools(document: Any) -> list[ToolDefinition]:
    """Parse a list of MCP tool declarations (JSON text or decoded list)."""
    if isinstance(document, (str, bytes)):
        document = json.loads(document)
    if not isinstance(document, list):
        raise MCPParseError(-1, "document must be a list of tool declarations")
    tools = []
    for i, entry in enumerate(document):
        if not isinstance(entry, Mapping):
            raise MCPParseError(i, "entry must be an object")
        name = entry.get("name")
        if not isinstance(name, str) or not name:
            raise MCPParseError(i, "'name' must be a non-empty string")
        description = entry.get("description", "")
        if not isinstance(description, str):
            raise MCPParseError(i, "'description' must be a string")
        schema = entry.get("inputSchema", {"type": "object", "properties": {}})
        if not isinstance(schema, Mapping):
            raise MCPParseError(i, "'inputSchema' must be an object")
        props = schema.get("properties", {})
        if not isinstance(props, Mapping):
            raise MCPParseError(i, "'inputSchema.properties' must be an object")
        required = schema.get("required", [])
        if not isinstance(required, list) or not all(isinstance(r, str) for r in required):
            raise MCPParseError(i, "'inputSchema.required' must be a list of names")
        missing = [r for r in required if r not in props]
        if missing:
            raise MCPParseError(i, f"required names not in properties: {missing}")
        annotations = entry.get("annotations", {})
        if annotations is None:
            annotations = {}
        if not isinstance(annotations, Mapping):
            raise MCPParseError(i, "'annotations' must be an object")
        comp = annotations.get(COMPENSATION_KEY)
        if comp is not None and not isinstance(comp, str):
            raise MCPParseError(i, f"'{COMPENSATION_KEY}' must be a string, got {type(comp).__name__}")
        mapping = annotations.get(MAPPING_KEY)
        if mapping is not None:
            if not isinstance(mapping, str):
                raise MCPParseError(i, f"'{MAPPING_KEY}' must be a string")
            try:
                parse_input_mapping(mapping)
            except MappingSyntaxError as exc:
                raise MCPParseError(i, f"'{MAPPING_KEY}': {exc}") from None
        tools.append(
            ToolDefinition(
                name=name,
                description=description,
                input_schema=json.loads(json.dumps(schema)),
                annotations=json.loads(json.dumps(annotations)),
            )
        )
    return tools


def load_mcp_tools(path: str | os.PathLike[str]) -> list[ToolDefinition]:
    return parse_mcp_tools(Path(path).read_text(encoding="utf-8"))


def dump_mcp_tools(tools: Iterable[ToolDefinition]) -> str:
    return json.dumps([t.to_mcp() for t in tools], indent=2)


class ToolRegistry:
    """Tool definitions known to a run, keyed by name."""

    def __init__(self, tools: Iterable[ToolDefinition] = ()) -> None:
        self._tools: dict[str, ToolDefinition] = {}
        for t in tools:
            self.register(t)

    def register(self, tool: ToolDefinition) -> None:
        self._tools[tool.name] = tool

    def overlay(self, tools: Iterable[ToolDefinition]) -> None:
        """Replace definitions by name, e.g. with annotated MCP declarations."""
        for t in tools:
            self._tools[t.name] = t

    def __contains__(self, name: object) -> bool:
        return name in self._tools

    def __getitem__(self, name: str) -> ToolDefinition:
        return self._tools[name]

    def get(self, name: str) -> ToolDefinition | None:
        return self._tools.get(name)

    def names(self) -> list[str]:
        return sorted(self._tools)

    def __iter__(self):
        return iter(self._tools.values())


# -- bindings ---------------------------------------------------------------

StateMapper = Callable[[Mapping[str, Any], Any], Mapping[str, Any]]


@dataclass
class ApiConfig:
    """Compensation pairs handed to the engine at agent construction time.

    ``state_mappers`` values may be a mapping string, a sequence of
    :class:`MappingRule`, or a callable ``(params, result) -> dict``.
    """

    compensation_pairs: dict[str, str] = field(default_factory=dict)
    state_mappers: dict[str, str | Sequence[MappingRule] | StateMapper] = field(default_factory=dict)


@dataclass(frozen=True)
class CompensationBinding:
    forward_tool: str
    compensation_tool: str | None
    input_mapping: tuple[MappingRule, ...] = ()
    provenance: Provenance = Provenance.ASSUMED_NO_SIDE_EFFECTS
    state_mapper: StateMapper | None = field(default=None, compare=False)

    @property
    def has_compensation(self) -> bool:
        return self.compensation_tool is not None


def _complete_rules(rules: Sequence[MappingRule], comp: ToolDefinition, where: str) -> tuple[MappingRule, ...]:
    declared = set(comp.properties)
    for rule in rules:
        if declared and rule.param not in declared:
            raise ResolutionError(f"{where}: {rule.param!r} is not a parameter of {comp.name}")
    mapped = {r.param for r in rules}
    missing = [p for p in comp.required if p not in mapped]
    return tuple(rules) + tuple(MappingRule(p, AdvisorInferred()) for p in missing)


def _mapping_from(value: Any, where: str) -> tuple[tuple[MappingRule, ...] | None, StateMapper | None]:
    if value is None:
        return None, None
    if callable(value):
        return (), value
    if isinstance(value, str):
        try:
            return parse_input_mapping(value), None
        except MappingSyntaxError as exc:
            raise ResolutionError(f"{where}: {exc}") from None
    return tuple(value), None


def resolve_static(forward_tool: str, api_config: ApiConfig | None, registry: ToolRegistry) -> CompensationBinding | None:
    """Tiers 1 and 2 only. ``None`` means ask the advisor next."""
    if forward_tool not in registry:
        raise ResolutionError(f"tool {forward_tool!r} is not registered")
    api_config = api_config or ApiConfig()
    defn = registry[forward_tool]

    if forward_tool in api_config.compensation_pairs:
        comp_name, provenance = api_config.compensation_pairs[forward_tool], Provenance.API_CONFIG
        rules, mapper = _mapping_from(api_config.state_mappers.get(forward_tool), f"api config for {forward_tool}")
    elif defn.compensation_tool is not None:
        comp_name, provenance = defn.compensation_tool, Provenance.MCP_ANNOTATION
        rules, mapper = _mapping_from(defn.input_mapping, f"annotation on {forward_tool}")
    else:
        return None

    if comp_name not in registry:
        raise ResolutionError(f"{provenance.value} names unregistered compensation tool {comp_name!r} for {forward_tool}")
    if rules is None and provenance == Provenance.API_CONFIG and defn.compensation_tool == comp_name:
        # config gave the pair only; the annotation may still carry the inputs
        rules, mapper = _mapping_from(defn.input_mapping, f"annotation on {forward_tool}")
    where = f"{provenance.value} mapping for {forward_tool}"
    rules = () if mapper is not None else _complete_rules(rules or (), registry[comp_name], where)
    return CompensationBinding(forward_tool, comp_name, rules, provenance, mapper)


def _resolve_via_advisor(forward_tool: str, registry: ToolRegistry, advisor: Advisor | None) -> CompensationBinding:
    if advisor is not None:
        answer = advisor.consult(
            AdvisorQuery(
                QueryKind.DISCOVER_COMPENSATION,
                {
                    "tool_name": forward_tool,
                    "description": registry[forward_tool].description,
                    "registry": registry.names(),
                },
            )
        )
        if isinstance(answer, DiscoveredCompensation) and answer.tool in registry:
            rules: tuple[MappingRule, ...] = ()
            if answer.input_mapping:
                try:
                    rules = parse_input_mapping(answer.input_mapping)
                    rules = _complete_rules(rules, registry[answer.tool], "advisor mapping")
                except (MappingSyntaxError, ResolutionError) as exc:
                    logger.warning("ignoring advisor mapping for %s: %s", forward_tool, exc)
                    rules = ()
            if not rules:
                rules = _complete_rules((), registry[answer.tool], "advisor mapping")
            return CompensationBinding(forward_tool, answer.tool, rules, Provenance.ADVISOR)
        if answer is not ABSTAIN and not isinstance(answer, DiscoveredCompensation):
            logger.warning("advisor gave %r for DISCOVER_COMPENSATION; treated as abstain", answer)
    return CompensationBinding(forward_tool, None, (), Provenance.ASSUMED_NO_SIDE_EFFECTS)


def resolve(
    forward_tool: str,
    api_config: ApiConfig | None,
    tool_registry: ToolRegistry,
    advisor: Advisor | None,
) -> CompensationBinding:
    binding = resolve_static(forward_tool, api_config, tool_registry)
    if binding is not None:
        return binding
    return _resolve_via_advisor(forward_tool, tool_registry, advisor)


class CompensationResolver:
    """Per-run cache of bindings.

    Config and annotation bindings are resolved for every registered tool at
    construction, so a dangling compensation name fails immediately. Advisor
    discovery runs lazily the first time a tool's binding is needed.
    """

    def __init__(self, registry: ToolRegistry, api_config: ApiConfig | None = None, advisor: Advisor | None = None) -> None:
        self.registry = registry
        self.api_config = api_config or ApiConfig()
        self.advisor = advisor
        unknown = [t for t in self.api_config.compensation_pairs if t not in registry]
        if unknown:
            raise ResolutionError(f"api config pairs name unregistered forward tools: {unknown}")
        self._cache: dict[str, CompensationBinding | None] = {
            t.name: resolve_static(t.name, self.api_config, registry) for t in registry
        }

    def resolve(self, forward_tool: str) -> CompensationBinding:
        if forward_tool not in self.registry:
            raise ResolutionError(f"tool {forward_tool!r} is not registered")
        cached = self._cache.get(forward_tool)
        if cached is None:
            cached = _resolve_via_advisor(forward_tool, self.registry, self.advisor)
            self._cache[forward_tool] = cached
        return cached

    def static_bindings(self) -> dict[str, CompensationBinding]:
        static = (Provenance.API_CONFIG, Provenance.MCP_ANNOTATION)
        return {k: v for k, v in self._cache.items() if v is not None and v.provenance in static}


# -- parameter extraction ------------------------------------------------


def _read_source(source: ForwardParam | ForwardResultPath, record: ToolCallRecord) -> tuple[Any, str]:
    if isinstance(source, ForwardParam):
        return read_path(record.params, source.name), str(source)
    return read_path(record.result, source.path), str(source)


def extract_params_traced(
    binding: CompensationBinding,
    record: ToolCallRecord,
    advisor: Advisor | None = None,
    registry: ToolRegistry | None = None,
) -> tuple[dict[str, Any], dict[str, str]]:
    """Like :func:`extract_params` but also returns where each value came from."""
    if binding.compensation_tool is None:
        raise ValueError(f"{binding.forward_tool} has no compensation tool")
    if record.status != Status.COMPLETED:
        raise ValueError(f"record {record.record_id} is {record.status.value}, not COMPLETED")

    if binding.state_mapper is not None:
        try:
            values = dict(binding.state_mapper(record.params, record.result))
        except Exception as exc:
            raise ExtractionError(record.record_id, "*", f"state mapper raised {exc!r}") from exc
        origins = {k: "state_mapper" for k in values}
    else:
        values, origins = {}, {}
        for rule in binding.input_mapping:
            source = rule.source
            via = ""
            if isinstance(source, AdvisorInferred):
                source = _ask_mapping(binding, rule.param, record, advisor, registry)
                via = "advisor:"
            try:
                value, origin = _read_source(source, record)
            except KeyError:
                raise ExtractionError(record.record_id, rule.param, f"{source} resolves to nothing") from None
            values[rule.param] = value
            origins[rule.param] = via + origin

    if registry is not None and binding.compensation_tool in registry:
        missing = [p for p in registry[binding.compensation_tool].required if p not in values]
        if missing:
            raise ExtractionError(record.record_id, missing[0], f"required by {binding.compensation_tool} but unmapped")
    return values, origins


def _ask_mapping(
    binding: CompensationBinding,
    param: str,
    record: ToolCallRecord,
    advisor: Advisor | None,
    registry: ToolRegistry | None,
) -> ForwardParam | ForwardResultPath:
    if advisor is None:
        raise ExtractionError(record.record_id, param, "no mapping configured and no advisor available")
    answer = advisor.consult(
        AdvisorQuery(
            QueryKind.INFER_INPUT_MAPPING,
            {
                "forward_tool": binding.forward_tool,
                "compensation_tool": binding.compensation_tool,
                "param": param,
                "record": {
                    "record_id": record.record_id,
                    "tool_name": record.tool_name,
                    "params": record.params,
                    "result": record.result,
                },
                "registry": registry.names() if registry is not None else [],
            },
        )
    )
    if answer is ABSTAIN or not isinstance(answer, str):
        raise ExtractionError(record.record_id, param, "advisor could not infer a source")
    try:
        return parse_source(answer)
    except MappingSyntaxError as exc:
        raise ExtractionError(record.record_id, param, f"advisor answer unusable: {exc}") from None


def extract_params(
    binding: CompensationBinding,
    record: ToolCallRecord,
    advisor: Advisor | None = None,
    registry: ToolRegistry | None = None,
) -> dict[str, Any]:
    """Build the compensation call's arguments from the forward record."""
    return extract_params_traced(binding, record, advisor, registry)[0]
