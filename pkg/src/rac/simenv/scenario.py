"""Scenario files: environment kind, disruptions, advisor rules, retry policy.

Scenarios are YAML (JSON is valid YAML too). Validation errors are reported as
``file:line: field.path: message``.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Any, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from rac.advisor import RuleTableAdvisor
from rac.clock import Clock
from rac.compreg import (
    ApiConfig,
    MappingSyntaxError,
    MCPParseError,
    ToolDefinition,
    load_mcp_tools,
    parse_input_mapping,
    parse_mcp_tools,
)
from rac.rcmanager import DEFAULT_PERMANENT_CODES, DEFAULT_TRANSIENT_CODES, RetryPolicy
from rac.simenv.builtin import SCRIPTS, TOOLSETS
from rac.simenv.environment import (
    DisruptionMode,
    DisruptionSpec,
    EnvironmentConfigError,
    SimEnvironment,
    ToolKind,
    ToolSpec,
)

KINDS = ("travel", "jobshop", "group_booking", "custom")


class ConfigError(ValueError):
    def __init__(self, message: str, *, field: str | None = None, line: int | None = None, source: str | None = None) -> None:
        self.field = field
        self.line = line
        self.source = source
        where = f"{source or '<scenario>'}:{line}" if line else (source or "<scenario>")
        super().__init__(f"{where}: {field}: {message}" if field else f"{where}: {message}")


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DisruptionModel(_Model):
    tool: str
    mode: Literal["transient", "permanent", "fail_on_nth_call"]
    error_code: str = "TEMPORARILY_UNAVAILABLE"
    fail_count: int = Field(1, ge=1)
    n: int = Field(1, ge=1)

    def to_spec(self) -> DisruptionSpec:
        return DisruptionSpec(self.tool, DisruptionMode(self.mode.upper()), self.error_code, self.fail_count, self.n)


class PolicyModel(_Model):
    max_retries: int = Field(3, ge=0)
    base_delay_ms: float = Field(500.0, ge=0)
    multiplier: float = Field(2.0, ge=1)
    jitter_fraction: float = Field(0.1, ge=0, lt=1)
    max_alternatives: int = Field(2, ge=0)
    permanent_codes: list[str] = []
    transient_codes: list[str] = []

    def to_policy(self) -> RetryPolicy:
        return RetryPolicy(
            max_retries=self.max_retries,
            base_delay=self.base_delay_ms,
            multiplier=self.multiplier,
            jitter_fraction=self.jitter_fraction,
            permanent_codes=(DEFAULT_PERMANENT_CODES - set(self.transient_codes)) | set(self.permanent_codes),
            transient_codes=(DEFAULT_TRANSIENT_CODES - set(self.permanent_codes)) | set(self.transient_codes),
        )


class CompensationModel(_Model):
    pairs: dict[str, str] = {}
    mappings: dict[str, str] = {}

    @model_validator(mode="after")
    def _check_mappings(self) -> CompensationModel:
        for tool, text in self.mappings.items():
            try:
                parse_input_mapping(text)
            except MappingSyntaxError as exc:
                raise ValueError(f"mappings.{tool}: {exc}") from None
        return self


class StepModel(_Model):
    tool: str
    params: dict[str, Any] = {}


class DeclineModel(_Model):
    param: str
    limit: float


class ToolModel(_Model):
    name: str
    kind: Literal["effect", "compensation", "read"]
    description: str = ""
    params: list[str] = []
    optional: list[str] = []
    ref_field: Optional[str] = None
    ref_prefix: Optional[str] = None
    reverses: Optional[str] = None
    ref_param: Optional[str] = None
    echo: list[str] = []
    returns: Any = None
    decline_above: Optional[DeclineModel] = None

    def to_spec(self) -> ToolSpec:
        return ToolSpec(
            name=self.name,
            kind=ToolKind(self.kind),
            description=self.description,
            params=tuple(self.params),
            optional=tuple(self.optional),
            ref_field=self.ref_field,
            ref_prefix=self.ref_prefix,
            reverses=self.reverses,
            ref_param=self.ref_param,
            echo=tuple(self.echo),
            returns=self.returns,
            decline_above=(self.decline_above.param, self.decline_above.limit) if self.decline_above else None,
        )


class ScenarioSpec(_Model):
    name: str
    kind: Literal["travel", "jobshop", "group_booking", "custom"]
    description: str = ""
    seed: int = 0
    latency_ms: float = Field(20.0, ge=0)
    mcp_tools: Union[str, list[dict[str, Any]], None] = None
    compensation: CompensationModel = CompensationModel()
    disruptions: list[DisruptionModel] = []
    policy: PolicyModel = PolicyModel()
    advisor: dict[str, Any] = {}
    tools: list[ToolModel] = []
    script: Optional[list[StepModel]] = None
    base_dir: Optional[str] = Field(None, exclude=True)

    @model_validator(mode="after")
    def _check(self) -> ScenarioSpec:
        if self.kind == "custom" and not self.tools:
            raise ValueError("custom scenarios must declare tools")
        if self.kind == "custom" and not self.script:
            raise ValueError("custom scenarios must declare a script")
        try:
            RuleTableAdvisor(self.advisor)
        except (ValueError, KeyError, TypeError) as exc:
            raise ValueError(f"advisor rule table: {exc}") from None
        return self

    # -- derived objects -------------------------------------------------

    def tool_specs(self) -> list[ToolSpec]:
        base = TOOLSETS[self.kind]() if self.kind in TOOLSETS else []
        return base + [t.to_spec() for t in self.tools]

    def steps(self) -> list[dict[str, Any]]:
        if self.script is not None:
            return [s.model_dump() for s in self.script]
        return [dict(s) for s in SCRIPTS[self.kind]]

    def api_config(self) -> ApiConfig:
        return ApiConfig(dict(self.compensation.pairs), dict(self.compensation.mappings))

    def retry_policy(self) -> RetryPolicy:
        return self.policy.to_policy()

    def make_advisor(self) -> RuleTableAdvisor:
        return RuleTableAdvisor(self.advisor)

    def mcp_definitions(self) -> list[ToolDefinition]:
        if self.mcp_tools is None:
            return []
        if isinstance(self.mcp_tools, list):
            return parse_mcp_tools(self.mcp_tools)
        path = Path(self.mcp_tools)
        if not path.is_absolute() and self.base_dir:
            path = Path(self.base_dir) / path
        return load_mcp_tools(path)


def build_environment(
    scenario: ScenarioSpec,
    *,
    clock: Clock | None = None,
    state_path: str | os.PathLike[str] | None = None,
    inject: bool = True,
) -> SimEnvironment:
    if scenario.kind not in KINDS:
        raise ConfigError(f"unknown scenario kind {scenario.kind!r}", field="kind")
    try:
        env = SimEnvironment(scenario.tool_specs(), clock=clock, latency_ms=scenario.latency_ms, state_path=state_path)
        if inject:
            for d in scenario.disruptions:
                env.inject(d.to_spec())
    except EnvironmentConfigError as exc:
        raise ConfigError(str(exc), field="disruptions" if "disrupt" in str(exc) else "tools") from None
    return env


# -- loading with line numbers --------------------------------------------------


def _line_of(root: yaml.Node | None, loc: tuple[Any, ...]) -> int | None:
    node, line = root, None
    for part in loc:
        if node is None:
            break
        if isinstance(node, yaml.MappingNode):
            nxt = None
            for key, value in node.value:
                if key.value == str(part):
                    line, nxt = key.start_mark.line + 1, value
                    break
            node = nxt
        elif isinstance(node, yaml.SequenceNode) and isinstance(part, int) and part < len(node.value):
            node = node.value[part]
            line = node.start_mark.line + 1
        else:
            break
    if line is None and root is not None:
        line = root.start_mark.line + 1
    return line


def parse_scenario(text: str, *, source: str = "<scenario>", base_dir: str | None = None) -> ScenarioSpec:
    try:
        root = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"not valid YAML: {getattr(exc, 'problem', exc)}", line=mark.line + 1 if mark else None, source=source) from None
    if not isinstance(data, dict):
        raise ConfigError("scenario must be a mapping", line=1, source=source)
    try:
        spec = ScenarioSpec.model_validate({**data, "base_dir": base_dir})
    except ValidationError as exc:
        err = exc.errors()[0]
        loc = tuple(p for p in err["loc"] if not (isinstance(p, str) and p in ("function-after", "literal_error")))
        field = ".".join(str(p) for p in loc) or "<root>"
        raise ConfigError(err["msg"], field=field, line=_line_of(root, loc), source=source) from None
    known = {t.name for t in spec.tool_specs()}
    for i, d in enumerate(spec.disruptions):
        if d.tool not in known:
            loc = ("disruptions", i, "tool")
            raise ConfigError(f"unknown tool {d.tool!r}", field="disruptions.%d.tool" % i, line=_line_of(root, loc), source=source)
    for i, step in enumerate(spec.script or ()):
        if step.tool not in known:
            loc = ("script", i, "tool")
            raise ConfigError(f"unknown tool {step.tool!r}", field="script.%d.tool" % i, line=_line_of(root, loc), source=source)
    try:
        spec.mcp_definitions()
    except (OSError, MCPParseError, ValueError) as exc:
        raise ConfigError(str(exc), field="mcp_tools", line=_line_of(root, ("mcp_tools",)), source=source) from None
    return spec


def load_scenario(path: str | os.PathLike[str]) -> ScenarioSpec:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read scenario: {exc}", source=str(path)) from None
    return parse_scenario(text, source=str(path), base_dir=str(path.parent))
