"""Pluggable decision interface for the judgement calls the engine cannot make
from configuration alone: classifying unknown errors, suggesting alternative
tools, discovering compensation tools and inferring compensation inputs.

:class:`RuleTableAdvisor` answers from a declarative table and is what the
simulator and tests use. Any object with a ``consult(query)`` method works.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Mapping, Protocol

logger = logging.getLogger(__name__)


class Classification(str, Enum):
    TRANSIENT = "TRANSIENT"
    PERMANENT = "PERMANENT"
    UNKNOWN = "UNKNOWN"


class QueryKind(str, Enum):
    CLASSIFY_ERROR = "CLASSIFY_ERROR"
    SUGGEST_ALTERNATIVE = "SUGGEST_ALTERNATIVE"
    DISCOVER_COMPENSATION = "DISCOVER_COMPENSATION"
    INFER_INPUT_MAPPING = "INFER_INPUT_MAPPING"


@dataclass(frozen=True)
class AdvisorQuery:
    kind: QueryKind
    payload: Mapping[str, Any] = field(default_factory=dict)


class _Abstain:
    _instance: _Abstain | None = None

    def __new__(cls) -> _Abstain:
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "ABSTAIN"

    def __bool__(self) -> bool:
        return False


ABSTAIN = _Abstain()


@dataclass(frozen=True)
class Suggestion:
    tool: str
    params: dict[str, Any]


@dataclass(frozen=True)
class DiscoveredCompensation:
    tool: str
    input_mapping: str | None = None


class Advisor(Protocol):
    def consult(self, query: AdvisorQuery) -> Any:
        """Answer the query or return ``ABSTAIN``.

        Answer types by kind: CLASSIFY_ERROR -> Classification,
        SUGGEST_ALTERNATIVE -> list[Suggestion], DISCOVER_COMPENSATION ->
        DiscoveredCompensation, INFER_INPUT_MAPPING -> a source expression
        such as ``"result.reservation_id"`` or ``"params.flight_id"``.
        """
        ...


class NullAdvisor:
    def consult(self, query: AdvisorQuery) -> Any:
        return ABSTAIN


def _flatten(value: Any, prefix: str = "") -> list[tuple[str, Any]]:
    out: list[tuple[str, Any]] = []
    if isinstance(value, dict):
        for k, v in value.items():
            out.extend(_flatten(v, f"{prefix}{k}."))
    elif isinstance(value, list):
        for i, v in enumerate(value):
            out.extend(_flatten(v, f"{prefix}{i}."))
    elif prefix and not isinstance(value, bool) and isinstance(value, (str, int, float)):
        out.append((prefix[:-1], value))
    return out


def _stem(name: str) -> tuple[str, str]:
    head, _, tail = name.rpartition("_")
    return head, tail


def infer_mapping_source(param: str, params: Mapping[str, Any], result: Any) -> str | None:
    """Name heuristic: exact key name, then shared ``_suffix`` stem.

    Result fields are searched before forward params. Among several stem
    matches, ones starting with the parameter's own prefix win; anything still
    ambiguous gives ``None``.
    """
    head, tail = _stem(param)
    for origin, value in (("result", result), ("params", dict(params))):
        leaves = [path for path, _ in _flatten(value)]
        exact = [p for p in leaves if p.rsplit(".", 1)[-1] == param]
        if len(exact) == 1:
            return f"{origin}.{exact[0]}"
        if exact:
            return None
        if not tail:
            continue
        stems = [p for p in leaves if p.rsplit(".", 1)[-1].endswith("_" + tail) or p.rsplit(".", 1)[-1] == tail]
        if len(stems) > 1 and head:
            stems = [p for p in stems if p.rsplit(".", 1)[-1].startswith(head)]
        if len(stems) == 1:
            return f"{origin}.{stems[0]}"
        if stems:
            return None
    return None


class RuleTableAdvisor:
    """Deterministic advisor driven by a rule table.

    Table keys (all optional)::

        classify:       {CODE_OR_SUBSTRING: TRANSIENT | PERMANENT}
        alternatives:   {tool: [{tool: other, params: {...}}, ...]}
        compensations:  {tool: cancel_tool | {tool: cancel_tool, input_mapping: "..."}}
        infer_mappings: true   # enable the name heuristic for input mappings
    """

    def __init__(self, table: Mapping[str, Any] | None = None) -> None:
        table = dict(table or {})
        self.classify_rules: dict[str, Classification] = {
            str(k): Classification(str(v).upper()) for k, v in (table.get("classify") or {}).items()
        }
        self.alternatives: dict[str, list[dict[str, Any]]] = {
            str(k): [dict(s) if isinstance(s, Mapping) else {"tool": str(s)} for s in v]
            for k, v in (table.get("alternatives") or {}).items()
        }
        self.compensations: dict[str, DiscoveredCompensation] = {}
        for fwd, comp in (table.get("compensations") or {}).items():
            if isinstance(comp, Mapping):
                self.compensations[str(fwd)] = DiscoveredCompensation(str(comp["tool"]), comp.get("input_mapping"))
            else:
                self.compensations[str(fwd)] = DiscoveredCompensation(str(comp))
        self.infer_mappings = bool(table.get("infer_mappings", False))

    def consult(self, query: AdvisorQuery) -> Any:
        handler = {
            QueryKind.CLASSIFY_ERROR: self._classify,
            QueryKind.SUGGEST_ALTERNATIVE: self._alternatives,
            QueryKind.DISCOVER_COMPENSATION: self._discover,
            QueryKind.INFER_INPUT_MAPPING: self._infer,
        }[query.kind]
        return handler(query.payload)

    def _classify(self, payload: Mapping[str, Any]) -> Any:
        code = payload.get("code")
        if code and code in self.classify_rules:
            return self.classify_rules[code]
        message = str(payload.get("error", ""))
        for pattern, verdict in self.classify_rules.items():
            if pattern in message:
                return verdict
        return ABSTAIN

    def _alternatives(self, payload: Mapping[str, Any]) -> Any:
        entries = self.alternatives.get(payload.get("tool_name", ""))
        if not entries:
            return ABSTAIN
        registry = set(payload.get("registry", ()))
        base = dict(payload.get("params") or {})
        out = []
        for entry in entries:
            if entry["tool"] not in registry:
                logger.debug("rule table names unregistered tool %s; dropped", entry["tool"])
                continue
            out.append(Suggestion(entry["tool"], {**base, **(entry.get("params") or {})}))
        return out or ABSTAIN

    def _discover(self, payload: Mapping[str, Any]) -> Any:
        found = self.compensations.get(payload.get("tool_name", ""))
        if found is None or found.tool not in set(payload.get("registry", ())):
            return ABSTAIN
        return found

    def _infer(self, payload: Mapping[str, Any]) -> Any:
        if not self.infer_mappings:
            return ABSTAIN
        record = payload.get("record") or {}
        source = infer_mapping_source(str(payload.get("param", "")), record.get("params") or {}, record.get("result"))
        return source if source is not None else ABSTAIN


class CountingAdvisor:
    """Wraps an advisor and counts consultations per query kind."""

    def __init__(self, inner: Advisor) -> None:
        self.inner = inner
        self.calls: Counter[QueryKind] = Counter()

    @property
    def total_calls(self) -> int:
        return sum(self.calls.values())

    def consult(self, query: AdvisorQuery) -> Any:
        self.calls[query.kind] += 1
        return self.inner.consult(query)
