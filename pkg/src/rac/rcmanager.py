"""Recovery and compensation manager.

When a logged tool call fails, :meth:`RCManager.handle_failure` works through
three stages in a fixed order:

1. retry with exponential backoff, unless the error is classified permanent;
2. ask the advisor for alternative tools and run them;
3. roll back every completed action of the run, dependents first.

Retries and alternatives go back through the interceptor, so they are logged
like any other call and a successful alternative can itself be compensated.
"""

from __future__ import annotations

import json
import logging
import random
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Protocol, Union

from rac.advisor import ABSTAIN, Advisor, AdvisorQuery, Classification, QueryKind, Suggestion
from rac.clock import Clock, VirtualClock
from rac.compreg import CompensationResolver, extract_params
from rac.regraph import build_graph, rollback_order
from rac.txlog import LogError, Status, ToolCallRecord, TransactionLog

logger = logging.getLogger(__name__)

DEFAULT_TRANSIENT_CODES = frozenset(
    {"RATE_LIMITED", "TIMEOUT", "TEMPORARILY_UNAVAILABLE", "CONNECTION_RESET", "SERVICE_BUSY", "MACHINE_BREAKDOWN"}
)
DEFAULT_PERMANENT_CODES = frozenset(
    {
        "PERMANENTLY_OFFLINE",
        "NOT_FOUND",
        "INVALID_REQUEST",
        "UNAUTHORIZED",
        "PAYMENT_DECLINED",
        "SOLD_OUT",
        "SEMANTIC_ERROR",
        "UNKNOWN_TOOL",
    }
)

_CODE_RE = re.compile(r"^([A-Z][A-Z0-9_]{2,})(?::|$)")


def error_code(error: Any) -> str | None:
    """Machine-readable tag of an error: a ``code`` attribute or a ``CODE:`` prefix."""
    code = getattr(error, "code", None)
    if isinstance(code, str) and code:
        return code
    m = _CODE_RE.match(str(error).strip())
    return m.group(1) if m else None


def error_text(error: Any) -> str:
    if isinstance(error, str):
        return error
    if getattr(error, "code", None):
        return str(error)
    return f"{type(error).__name__}: {error}"


@dataclass(frozen=True)
class RetryPolicy:
    max_retries: int = 3
    base_delay: float = 500.0
    multiplier: float = 2.0
    jitter_fraction: float = 0.1
    permanent_codes: frozenset[str] = DEFAULT_PERMANENT_CODES
    transient_codes: frozenset[str] = DEFAULT_TRANSIENT_CODES

    def __post_init__(self) -> None:
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.base_delay < 0 or self.multiplier < 1:
            raise ValueError("base_delay must be >= 0 and multiplier >= 1")
        if not 0 <= self.jitter_fraction < 1:
            raise ValueError("jitter_fraction must be in [0, 1)")

    def nominal_delay(self, retry: int) -> float:
        """Delay before retry number ``retry`` (1-based), jitter excluded."""
        return self.base_delay * self.multiplier ** (retry - 1)

    def delay(self, retry: int, rng: random.Random) -> float:
        d = self.nominal_delay(retry)
        return max(0.0, d + rng.uniform(-self.jitter_fraction, self.jitter_fraction) * d)


@dataclass
class FailureContext:
    record_id: int
    tool_name: str
    params: dict[str, Any]
    error_message: str
    classification: Classification = Classification.UNKNOWN
    attempts_made: int = 1
    alternatives_tried: list[str] = field(default_factory=list)

    @property
    def retries(self) -> int:
        return self.attempts_made - 1


class EntryOutcome(str, Enum):
    COMPENSATED = "COMPENSATED"
    COMPENSATION_FAILED = "COMPENSATION_FAILED"
    SKIPPED_NO_SIDE_EFFECTS = "SKIPPED_NO_SIDE_EFFECTS"


@dataclass(frozen=True)
class RollbackEntry:
    record_id: int
    tool_name: str
    compensation_tool: str | None
    extracted_params: dict[str, Any] | None
    outcome: EntryOutcome
    error: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "record_id": self.record_id,
            "tool_name": self.tool_name,
            "compensation_tool": self.compensation_tool,
            "extracted_params": self.extracted_params,
            "outcome": self.outcome.value,
            "error": self.error,
        }


@dataclass(frozen=True)
class RollbackReport:
    entries: tuple[RollbackEntry, ...] = ()
    halted_at: int | None = None
    summary_text: str = ""
    plan: tuple[int, ...] = ()

    @property
    def compensations(self) -> int:
        return sum(e.outcome == EntryOutcome.COMPENSATED for e in self.entries)

    @property
    def skipped(self) -> int:
        return sum(e.outcome == EntryOutcome.SKIPPED_NO_SIDE_EFFECTS for e in self.entries)

    def to_dict(self) -> dict[str, Any]:
        return {
            "entries": [e.to_dict() for e in self.entries],
            "halted_at": self.halted_at,
            "plan": list(self.plan),
            "summary_text": self.summary_text,
        }


@dataclass(frozen=True)
class Recovered:
    result: Any
    record_id: int
    ctx: FailureContext


@dataclass(frozen=True)
class RecoveredViaAlternative:
    result: Any
    alt_tool: str
    record_id: int
    ctx: FailureContext


@dataclass(frozen=True)
class RolledBack:
    report: RollbackReport
    ctx: FailureContext

    @property
    def summary(self) -> str:
        return self.report.summary_text


RecoveryOutcome = Union[Recovered, RecoveredViaAlternative, RolledBack]


@dataclass(frozen=True)
class CallAttempt:
    record: ToolCallRecord
    result: Any = None
    error: Any = None

    @property
    def ok(self) -> bool:
        return self.error is None


class Executor(Protocol):
    """Runs a forward call through the log (the interceptor)."""

    def execute_logged(self, tool_name: str, params: dict[str, Any], *, attempt: int = 1, phase: str = "execute") -> CallAttempt: ...

    def is_registered(self, tool_name: str) -> bool: ...


class ToolBackend(Protocol):
    def call(self, tool: str, params: dict[str, Any]) -> Any: ...

    def __contains__(self, tool: object) -> bool: ...


@dataclass(frozen=True)
class TraceEvent:
    seq: int
    phase: str
    action: str
    tool: str | None = None
    record_id: int | None = None
    detail: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "seq": self.seq,
            "phase": self.phase,
            "action": self.action,
            "tool": self.tool,
            "record_id": self.record_id,
            "detail": self.detail,
        }


class EventTrace:
    """Ordered record of what the interceptor and manager did."""

    def __init__(self) -> None:
        self.events: list[TraceEvent] = []

    def emit(self, phase: str, action: str, tool: str | None = None, record_id: int | None = None, detail: str = "") -> None:
        self.events.append(TraceEvent(len(self.events) + 1, phase, action, tool, record_id, detail))

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e.to_dict(), sort_keys=True) + "\n" for e in self.events)

    def __iter__(self):
        return iter(self.events)

    def __len__(self) -> int:
        return len(self.events)


def _plural(n: int, word: str, plural: str | None = None) -> str:
    return f"{n} {word if n == 1 else (plural or word + 's')}"


def format_rollback(report: RollbackReport) -> str:
    comps = report.compensations
    failed = sum(e.outcome == EntryOutcome.COMPENSATION_FAILED for e in report.entries)
    lines = [f"Rollback: {_plural(comps, 'compensation')}, {report.skipped} skipped (no side effects), {failed} failed."]
    for e in report.entries:
        if e.outcome == EntryOutcome.SKIPPED_NO_SIDE_EFFECTS:
            lines.append(f"  - record {e.record_id} {e.tool_name}: no compensation needed")
            continue
        args = json.dumps(e.extracted_params, sort_keys=True) if e.extracted_params is not None else "(unresolved)"
        line = f"  - record {e.record_id} {e.tool_name} -> {e.compensation_tool} {args}: {e.outcome.value}"
        if e.error:
            line += f" ({e.error})"
        lines.append(line)
    if report.halted_at is not None:
        done = {e.record_id for e in report.entries}
        left = [r for r in report.plan if r not in done]
        failed_entry = next(e for e in report.entries if e.outcome == EntryOutcome.COMPENSATION_FAILED)
        lines.append(
            f"Rollback HALTED at record {report.halted_at}: compensation {failed_entry.compensation_tool} failed."
        )
        lines.append(f"MANUAL ATTENTION REQUIRED: side effects may remain; records still uncompensated: {left}.")
    elif comps:
        lines.append("All side effects of this run were undone.")
    return "\n".join(lines)


def format_context_message(ctx: FailureContext, report: RollbackReport) -> str:
    """Deterministic summary handed back to the agent after a rollback."""
    lines = [
        f"Tool call failed: {ctx.tool_name} (record {ctx.record_id}) -> {ctx.error_message}",
        f"Classification: {ctx.classification.value}",
        f"Recovery attempts: {_plural(ctx.retries, 'retry', 'retries')}, "
        f"{_plural(len(ctx.alternatives_tried), 'alternative')}"
        + (f" ({', '.join(ctx.alternatives_tried)})" if ctx.alternatives_tried else "")
        + ".",
        format_rollback(report),
    ]
    return "\n".join(lines)


class RCManager:
    """Recovery and compensation for one run. Not safe for concurrent use."""

    def __init__(
        self,
        log: TransactionLog,
        env: ToolBackend,
        resolver: CompensationResolver,
        advisor: Advisor,
        executor: Executor,
        *,
        policy: RetryPolicy | None = None,
        max_alternatives: int = 2,
        clock: Clock | None = None,
        seed: int = 0,
        trace: EventTrace | None = None,
    ) -> None:
        self.log = log
        self.env = env
        self.resolver = resolver
        self.advisor = advisor
        self.executor = executor
        self.policy = policy or RetryPolicy()
        self.max_alternatives = max_alternatives
        self.clock = clock or VirtualClock()
        self.rng = random.Random(seed)
        self.trace = trace if trace is not None else EventTrace()
        self.retries_made = 0
        self.alternatives_tried = 0

    # -- classification ------------------------------------------------

    def classify_error(self, error: Any, tool_name: str | None = None) -> Classification:
        code = error_code(error)
        if code in self.policy.permanent_codes:
            verdict = Classification.PERMANENT
        elif code in self.policy.transient_codes:
            verdict = Classification.TRANSIENT
        else:
            answer = self.advisor.consult(
                AdvisorQuery(QueryKind.CLASSIFY_ERROR, {"error": error_text(error), "code": code, "tool_name": tool_name})
            )
            if answer in (Classification.TRANSIENT, Classification.PERMANENT):
                verdict = answer
            else:
                # bounded retries are the safe default for unknown errors
                verdict = Classification.TRANSIENT
        self.trace.emit("classify", verdict.value, tool_name, detail=code or "")
        return verdict

    # -- stages ----------------------------------------------------------

    def retry_with_backoff(self, ctx: FailureContext) -> CallAttempt | None:
        """Re-run the failed call; ``None`` once retries are exhausted."""
        last = None
        for retry in range(1, self.policy.max_retries + 1):
            wait = self.policy.delay(retry, self.rng)
            self.trace.emit("retry", "wait", ctx.tool_name, detail=f"{wait:.1f}ms")
            self.clock.sleep(wait)
            attempt = self.executor.execute_logged(ctx.tool_name, ctx.params, attempt=retry + 1, phase="retry")
            ctx.attempts_made += 1
            self.retries_made += 1
            if attempt.ok:
                return attempt
            last = attempt
            ctx.error_message = error_text(attempt.error)
            if self.classify_error(attempt.error, ctx.tool_name) == Classification.PERMANENT:
                ctx.classification = Classification.PERMANENT
                break
        if last is not None:
            self.trace.emit("retry", "exhausted", ctx.tool_name, last.record.record_id, ctx.error_message)
        return None

    def try_alternatives(self, ctx: FailureContext) -> CallAttempt | None:
        answer = self.advisor.consult(
            AdvisorQuery(
                QueryKind.SUGGEST_ALTERNATIVE,
                {
                    "tool_name": ctx.tool_name,
                    "params": ctx.params,
                    "error": ctx.error_message,
                    "registry": sorted(t for t in self.resolver.registry.names() if self.executor.is_registered(t)),
                },
            )
        )
        if answer is ABSTAIN or not answer:
            self.trace.emit("alternative", "none", ctx.tool_name)
            return None
        for suggestion in list(answer)[: self.max_alternatives]:
            if not isinstance(suggestion, Suggestion):
                continue
            ctx.alternatives_tried.append(suggestion.tool)
            self.alternatives_tried += 1
            if suggestion.tool == ctx.tool_name or not self.executor.is_registered(suggestion.tool):
                self.trace.emit("alternative", "discarded", suggestion.tool)
                continue
            attempt = self.executor.execute_logged(suggestion.tool, dict(suggestion.params), phase="alternative")
            if attempt.ok:
                return attempt
        return None

    def rollback(self) -> RollbackReport:
        records = {r.record_id: r for r in self.log.get_all()}
        plan = rollback_order(build_graph(records.values()))
        self.trace.emit("rollback", "plan", detail=",".join(map(str, plan)))
        entries: list[RollbackEntry] = []
        halted_at = None
        for rid in plan:
            rec = records[rid]
            comp_tool = None
            params = None
            try:
                binding = self.resolver.resolve(rec.tool_name)
                comp_tool = binding.compensation_tool
                if comp_tool is None:
                    entries.append(RollbackEntry(rid, rec.tool_name, None, None, EntryOutcome.SKIPPED_NO_SIDE_EFFECTS))
                    self.trace.emit("compensate", "skip", rec.tool_name, rid)
                    continue
                params = extract_params(binding, rec, self.advisor, self.resolver.registry)
                self.trace.emit("compensate", "invoke", comp_tool, rid, json.dumps(params, sort_keys=True))
                self.env.call(comp_tool, params)
            except LogError:
                raise
            except Exception as exc:  # includes ResolutionError / ExtractionError
                msg = error_text(exc)
                self.trace.emit("compensate", "failed", comp_tool, rid, msg)
                self.log.transition(rid, Status.COMPENSATION_FAILED, error=msg)
                entries.append(RollbackEntry(rid, rec.tool_name, comp_tool, params, EntryOutcome.COMPENSATION_FAILED, msg))
                halted_at = rid
                break
            self.log.transition(rid, Status.COMPENSATED)
            entries.append(RollbackEntry(rid, rec.tool_name, comp_tool, params, EntryOutcome.COMPENSATED))
        report = RollbackReport(tuple(entries), halted_at, plan=tuple(plan))
        return replace(report, summary_text=format_rollback(report))

    # -- entry point -----------------------------------------------------

    def handle_failure(self, record: ToolCallRecord, error: Any) -> RecoveryOutcome:
        if record.status != Status.FAILED:
            raise ValueError(f"record {record.record_id} is {record.status.value}, expected FAILED")
        ctx = FailureContext(record.record_id, record.tool_name, dict(record.params), error_text(error))
        ctx.classification = self.classify_error(error, record.tool_name)

        if ctx.classification != Classification.PERMANENT:
            attempt = self.retry_with_backoff(ctx)
            if attempt is not None:
                return Recovered(attempt.result, attempt.record.record_id, ctx)

        attempt = self.try_alternatives(ctx)
        if attempt is not None:
            return RecoveredViaAlternative(attempt.result, attempt.record.tool_name, attempt.record.record_id, ctx)

        report = self.rollback()
        report = replace(report, summary_text=format_context_message(ctx, report))
        return RolledBack(report, ctx)
