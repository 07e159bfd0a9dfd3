"""Tool interceptor: log, execute, detect errors, hand failures to the manager."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Callable, Optional

from rac.rcmanager import (
    CallAttempt,
    EventTrace,
    RCManager,
    Recovered,
    RecoveredViaAlternative,
    RolledBack,
    ToolBackend,
    error_text,
)
from rac.txlog import LogError, Status, ToolCallRecord, TransactionLog

logger = logging.getLogger(__name__)

ErrorDetector = Callable[[ToolCallRecord], Optional[str]]


class UnknownToolError(KeyError):
    """The agent asked for a tool the backend does not provide."""


class MessageSource(str, Enum):
    AGENT = "AGENT"
    TOOL = "TOOL"
    RECOVERY = "RECOVERY"


@dataclass(frozen=True)
class Message:
    source: MessageSource
    text: str


@dataclass
class AgentContext:
    run_id: str
    messages: list[Message] = field(default_factory=list)

    def add(self, source: MessageSource, text: str) -> None:
        self.messages.append(Message(MessageSource(source), text))

    def recovery_messages(self) -> list[str]:
        return [m.text for m in self.messages if m.source == MessageSource.RECOVERY]


@dataclass(frozen=True)
class RecoverySummary:
    """What the agent receives instead of a result when recovery gave up."""

    text: str
    outcome: RolledBack

    def __str__(self) -> str:
        return self.text


class DetectorHandle:
    def __init__(self, owner: ToolInterceptor, detector: ErrorDetector) -> None:
        self._owner = owner
        self.detector = detector

    def remove(self) -> None:
        if self.detector in self._owner._detectors:
            self._owner._detectors.remove(self.detector)


class FunctionTools:
    """Minimal backend over plain callables, called with keyword arguments."""

    def __init__(self, tools: dict[str, Callable[..., Any]] | None = None) -> None:
        self.tools = dict(tools or {})

    def register(self, name: str, fn: Callable[..., Any]) -> None:
        self.tools[name] = fn

    def call(self, tool: str, params: dict[str, Any]) -> Any:
        return self.tools[tool](**params)

    def __contains__(self, tool: object) -> bool:
        return tool in self.tools


class ToolInterceptor:
    """Wraps every tool call of one run.

    Success returns the raw tool result. A failure is logged, handed to the
    manager, and either the recovered result or a :class:`RecoverySummary` is
    returned; the agent never sees a raw tool error.
    """

    def __init__(
        self,
        env: ToolBackend,
        log: TransactionLog,
        ctx: AgentContext | None = None,
        trace: EventTrace | None = None,
    ) -> None:
        self.env = env
        self.log = log
        self.ctx = ctx or AgentContext(log.run_id)
        self.trace = trace if trace is not None else EventTrace()
        self.manager: RCManager | None = None
        self._detectors: list[ErrorDetector] = []

    def attach(self, manager: RCManager) -> None:
        self.manager = manager

    def is_registered(self, tool_name: str) -> bool:
        return tool_name in self.env

    def register_error_detector(self, predicate: ErrorDetector) -> DetectorHandle:
        """Run ``predicate`` on each would-be COMPLETED record.

        A non-empty string return marks the call as semantically failed. The
        first detector (in registration order) to answer wins.
        """
        self._detectors.append(predicate)
        return DetectorHandle(self, predicate)

    def _detect(self, candidate: ToolCallRecord) -> str | None:
        for detector in list(self._detectors):
            try:
                found = detector(candidate)
            except Exception:
                logger.warning("error detector %r raised; treated as no error", detector, exc_info=True)
                continue
            if found:
                return str(found)
        return None

    def execute_logged(
        self, tool_name: str, params: dict[str, Any], *, attempt: int = 1, phase: str = "execute"
    ) -> CallAttempt:
        """Append PENDING, run the tool, record COMPLETED or FAILED. No recovery."""
        record = self.log.append(tool_name, params, attempt=attempt)
        self.trace.emit(phase, "invoke", tool_name, record.record_id)
        try:
            result = self.env.call(tool_name, dict(record.params))
        except LogError:
            raise
        except Exception as exc:
            failed = self.log.transition(record.record_id, Status.FAILED, error=error_text(exc))
            self.trace.emit(phase, "failed", tool_name, record.record_id, failed.error or "")
            return CallAttempt(failed, error=exc)
        problem = self._detect(replace(record, status=Status.COMPLETED, result=result))
        if problem is not None:
            message = f"SEMANTIC_ERROR: {problem}"
            failed = self.log.transition(record.record_id, Status.FAILED, error=message)
            self.trace.emit(phase, "failed", tool_name, record.record_id, message)
            return CallAttempt(failed, error=message)
        done = self.log.transition(record.record_id, Status.COMPLETED, result=result)
        self.trace.emit(phase, "completed", tool_name, record.record_id)
        return CallAttempt(done, result=result)

    def invoke_tool(self, tool_name: str, params: dict[str, Any]) -> Any:
        if not self.is_registered(tool_name):
            raise UnknownToolError(tool_name)
        if self.manager is None:
            raise RuntimeError("no recovery manager attached")
        attempt = self.execute_logged(tool_name, params)
        if attempt.ok:
            self.ctx.add(MessageSource.TOOL, f"{tool_name} -> {json.dumps(attempt.result, sort_keys=True)}")
            return attempt.result

        outcome = self.manager.handle_failure(attempt.record, attempt.error)
        if isinstance(outcome, Recovered):
            self.ctx.add(
                MessageSource.RECOVERY,
                f"{tool_name} failed ({outcome.ctx.error_message}); recovered after "
                f"{outcome.ctx.retries} {'retry' if outcome.ctx.retries == 1 else 'retries'}.",
            )
            self.ctx.add(MessageSource.TOOL, f"{tool_name} -> {json.dumps(outcome.result, sort_keys=True)}")
            return outcome.result
        if isinstance(outcome, RecoveredViaAlternative):
            self.ctx.add(
                MessageSource.RECOVERY,
                f"{tool_name} failed ({outcome.ctx.error_message}); used alternative {outcome.alt_tool} instead.",
            )
            self.ctx.add(MessageSource.TOOL, f"{outcome.alt_tool} -> {json.dumps(outcome.result, sort_keys=True)}")
            return outcome.result
        self.ctx.add(MessageSource.RECOVERY, outcome.summary)
        return RecoverySummary(outcome.summary, outcome)
