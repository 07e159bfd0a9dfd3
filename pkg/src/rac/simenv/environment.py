"""Deterministic tool environment with fault injection and a side-effect ledger."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Mapping

from rac.clock import Clock, VirtualClock
from rac.compreg import ToolDefinition


class ToolError(Exception):
    """A failed tool call. ``code`` is the machine-readable error tag."""

    def __init__(self, code: str, message: str = "") -> None:
        super().__init__(f"{code}: {message}" if message else code)
        self.code = code
        self.message = message


class EnvironmentConfigError(ValueError):
    pass


class RunOutcome(str, Enum):
    SUCCESS = "SUCCESS"
    ROLLED_BACK_CLEAN = "ROLLED_BACK_CLEAN"
    HALTED_DIRTY = "HALTED_DIRTY"


class DisruptionMode(str, Enum):
    TRANSIENT = "TRANSIENT"
    PERMANENT = "PERMANENT"
    FAIL_ON_NTH_CALL = "FAIL_ON_NTH_CALL"


@dataclass(frozen=True)
class DisruptionSpec:
    target_tool: str
    mode: DisruptionMode
    error_code: str = "TEMPORARILY_UNAVAILABLE"
    fail_count: int = 1
    n: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", DisruptionMode(self.mode))
        if self.mode == DisruptionMode.TRANSIENT and self.fail_count < 1:
            raise EnvironmentConfigError(f"TRANSIENT fail_count must be >= 1, got {self.fail_count}")
        if self.mode == DisruptionMode.FAIL_ON_NTH_CALL and self.n < 1:
            raise EnvironmentConfigError(f"FAIL_ON_NTH_CALL n must be >= 1, got {self.n}")


class ToolKind(str, Enum):
    EFFECT = "effect"
    COMPENSATION = "compensation"
    READ = "read"


@dataclass(frozen=True)
class ToolSpec:
    """How the simulator behaves for one tool.

    Effect tools mint an identifier under ``ref_field`` in their result.
    Compensation tools reverse the effect of ``reverses`` whose identifier
    arrives in parameter ``ref_param``. Read tools return ``returns``.
    """

    name: str
    kind: ToolKind
    description: str = ""
    params: tuple[str, ...] = ()
    optional: tuple[str, ...] = ()
    ref_field: str | None = None
    ref_prefix: str | None = None
    reverses: str | None = None
    ref_param: str | None = None
    echo: tuple[str, ...] = ()
    returns: Any = None
    decline_above: tuple[str, float] | None = None

    def definition(self) -> ToolDefinition:
        props = {p: {"type": "string"} for p in (*self.params, *self.optional)}
        return ToolDefinition(
            name=self.name,
            description=self.description,
            input_schema={"type": "object", "properties": props, "required": list(self.params)},
        )


@dataclass
class Effect:
    effect_id: str
    tool_name: str
    params: dict[str, Any]
    reversed: bool = False


@dataclass
class TraceEntry:
    tool: str
    params: dict[str, Any]
    outcome: str


@dataclass
class LedgerVerdict:
    clean: bool
    violations: list[str] = field(default_factory=list)


@dataclass
class _Disruption:
    spec: DisruptionSpec
    remaining: int = 0


class SimEnvironment:
    """Tools, injected disruptions and the ledger of what actually happened.

    With ``state_path`` set, the full state is rewritten atomically after each
    call so a separate process can reopen the same "world" after a crash.
    """

    def __init__(
        self,
        tools: list[ToolSpec],
        *,
        clock: Clock | None = None,
        latency_ms: float = 0,
        state_path: str | os.PathLike[str] | None = None,
    ) -> None:
        self.tools: dict[str, ToolSpec] = {}
        for t in tools:
            if t.name in self.tools:
                raise EnvironmentConfigError(f"tool {t.name!r} declared twice")
            self.tools[t.name] = t
        for t in tools:
            if t.kind == ToolKind.COMPENSATION:
                fwd = self.tools.get(t.reverses or "")
                if fwd is None or fwd.kind != ToolKind.EFFECT:
                    raise EnvironmentConfigError(f"{t.name} reverses {t.reverses!r}, which is not an effect tool")
                if not t.ref_param:
                    raise EnvironmentConfigError(f"{t.name} needs ref_param")
            if t.kind == ToolKind.EFFECT and not t.ref_field:
                raise EnvironmentConfigError(f"{t.name} needs ref_field")
        self.clock = clock or VirtualClock()
        self.latency_ms = latency_ms
        self.state_path = Path(state_path) if state_path else None
        self.call_counts: dict[str, int] = {name: 0 for name in self.tools}
        self.effects: list[Effect] = []
        self.call_trace: list[TraceEntry] = []
        self._disruptions: dict[str, list[_Disruption]] = {}
        self._seq = 0

    # -- setup -------------------------------------------------------------

    def definitions(self) -> list[ToolDefinition]:
        return [t.definition() for t in self.tools.values()]

    def inject(self, disruption: DisruptionSpec) -> SimEnvironment:
        if disruption.target_tool not in self.tools:
            raise EnvironmentConfigError(f"cannot disrupt unknown tool {disruption.target_tool!r}")
        self._disruptions.setdefault(disruption.target_tool, []).append(
            _Disruption(disruption, disruption.fail_count if disruption.mode == DisruptionMode.TRANSIENT else 0)
        )
        self._persist()
        return self

    def __contains__(self, name: object) -> bool:
        return name in self.tools

    # -- calls -------------------------------------------------------------

    def _injected_failure(self, tool: str, nth: int) -> DisruptionSpec | None:
        hit = None
        for d in self._disruptions.get(tool, ()):
            mode = d.spec.mode
            if mode == DisruptionMode.PERMANENT:
                fires = True
            elif mode == DisruptionMode.TRANSIENT:
                fires = d.remaining > 0
                if fires:
                    d.remaining -= 1
            else:
                fires = nth == d.spec.n
            if fires and hit is None:
                hit = d.spec
        return hit

    def call(self, tool: str, params: Mapping[str, Any]) -> Any:
        spec = self.tools.get(tool)
        if spec is None:
            raise ToolError("UNKNOWN_TOOL", tool)
        params = json.loads(json.dumps(dict(params)))
        self.call_counts[tool] += 1
        if self.latency_ms:
            self.clock.sleep(self.latency_ms)
        try:
            injected = self._injected_failure(tool, self.call_counts[tool])
            if injected is not None:
                raise ToolError(injected.error_code, f"injected failure on {tool} call #{self.call_counts[tool]}")
            missing = [p for p in spec.params if p not in params]
            if missing:
                raise ToolError("INVALID_REQUEST", f"{tool} missing parameters {missing}")
            result = self._execute(spec, params)
        except ToolError as exc:
            self.call_trace.append(TraceEntry(tool, params, f"error:{exc.code}"))
            self._persist()
            raise
        self.call_trace.append(TraceEntry(tool, params, "ok"))
        self._persist()
        return result

    def _execute(self, spec: ToolSpec, params: dict[str, Any]) -> Any:
        if spec.kind == ToolKind.READ:
            return json.loads(json.dumps(spec.returns if spec.returns is not None else {}))
        if spec.kind == ToolKind.EFFECT:
            if spec.decline_above is not None:
                key, limit = spec.decline_above
                if float(params.get(key, 0)) > limit:
                    return {"status": "declined", "reason": f"{key} above {limit:g}"}
            self._seq += 1
            ref = f"{spec.ref_prefix or spec.name.upper()}-{self._seq:04d}"
            self.effects.append(Effect(ref, spec.name, params))
            out = {spec.ref_field: ref, "status": "confirmed"}
            out.update({k: params[k] for k in spec.echo if k in params})
            return out
        ref = params.get(spec.ref_param)
        target = next((e for e in self.effects if e.effect_id == ref and e.tool_name == spec.reverses), None)
        if target is None:
            raise ToolError("UNKNOWN_REFERENCE", f"{spec.name}: no {spec.reverses} effect {ref!r}")
        if target.reversed:
            raise ToolError("ALREADY_REVERSED", f"{spec.name}: {ref} was already reversed")
        target.reversed = True
        return {"reversed": ref, "status": "cancelled"}

    # -- ledger ------------------------------------------------------------

    def unreversed_effects(self) -> list[Effect]:
        return [e for e in self.effects if not e.reversed]

    def ledger(self) -> dict[str, Any]:
        return {
            "effects": [asdict(e) for e in self.effects],
            "call_trace": [asdict(t) for t in self.call_trace],
        }

    # -- persistence -------------------------------------------------------

    def _state(self) -> dict[str, Any]:
        return {
            "seq": self._seq,
            "call_counts": self.call_counts,
            "disruptions": {
                tool: [{"spec": {**asdict(d.spec), "mode": d.spec.mode.value}, "remaining": d.remaining} for d in ds]
                for tool, ds in self._disruptions.items()
            },
            **self.ledger(),
        }

    def _persist(self) -> None:
        if self.state_path is None:
            return
        self.state_path.parent.mkdir(parents=True, exist_ok=True)
        tmp = self.state_path.with_suffix(self.state_path.suffix + ".tmp")
        tmp.write_text(json.dumps(self._state(), sort_keys=True), encoding="utf-8")
        os.replace(tmp, self.state_path)

    def restore(self, state_path: str | os.PathLike[str] | None = None) -> SimEnvironment:
        """Load state written by a previous process and keep persisting there."""
        path = Path(state_path) if state_path else self.state_path
        if path is None:
            raise EnvironmentConfigError("no state path to restore from")
        state = json.loads(path.read_text(encoding="utf-8"))
        self.state_path = path
        self._seq = state["seq"]
        self.call_counts.update(state["call_counts"])
        self.effects = [Effect(**e) for e in state["effects"]]
        self.call_trace = [TraceEntry(**t) for t in state["call_trace"]]
        self._disruptions = {
            tool: [_Disruption(DisruptionSpec(**d["spec"]), d["remaining"]) for d in ds]
            for tool, ds in state["disruptions"].items()
        }
        return self


def ledger_is_clean(env: SimEnvironment, run_outcome: RunOutcome | str) -> LedgerVerdict:
    """Effects may only linger after a run that reached its goal."""
    if RunOutcome(run_outcome) == RunOutcome.SUCCESS:
        return LedgerVerdict(True, [])
    violations = [f"{e.tool_name} effect {e.effect_id} {e.params} was never reversed" for e in env.unreversed_effects()]
    return LedgerVerdict(not violations, violations)

