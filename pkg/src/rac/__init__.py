"""Compensation-based recovery for agent tool calls.

Every tool call goes through a :class:`~rac.interceptor.ToolInterceptor` that
writes it to a durable :class:`~rac.txlog.TransactionLog`. Failures are retried,
replaced with alternatives, or, as a last resort, every completed action of the
run is undone by its compensation tool, most dependent first.
"""

from rac.advisor import Classification, RuleTableAdvisor
from rac.compreg import ApiConfig, CompensationBinding, Provenance, ToolDefinition, ToolRegistry, parse_mcp_tools
from rac.engine import Engine, create_engine
from rac.interceptor import AgentContext, FunctionTools, RecoverySummary, ToolInterceptor
from rac.rcmanager import RCManager, RetryPolicy, RollbackReport
from rac.txlog import Status, ToolCallRecord, TransactionLog

__all__ = [
    "AgentContext",
    "ApiConfig",
    "Classification",
    "CompensationBinding",
    "Engine",
    "FunctionTools",
    "Provenance",
    "RCManager",
    "RecoverySummary",
    "RetryPolicy",
    "RollbackReport",
    "RuleTableAdvisor",
    "Status",
    "ToolCallRecord",
    "ToolDefinition",
    "ToolInterceptor",
    "ToolRegistry",
    "TransactionLog",
    "create_engine",
    "parse_mcp_tools",
]
