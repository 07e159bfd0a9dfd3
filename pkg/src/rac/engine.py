"""Wires log, registry, advisor, interceptor and manager for one run."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Iterable

from rac.advisor import Advisor, CountingAdvisor, NullAdvisor
from rac.clock import Clock, VirtualClock
from rac.compreg import ApiConfig, CompensationResolver, ToolDefinition, ToolRegistry
from rac.interceptor import AgentContext, ToolInterceptor
from rac.rcmanager import EventTrace, RCManager, RetryPolicy, RollbackReport, ToolBackend
from rac.txlog import TransactionLog


@dataclass
class Engine:
    log: TransactionLog
    env: ToolBackend
    resolver: CompensationResolver
    advisor: CountingAdvisor
    interceptor: ToolInterceptor
    manager: RCManager
    trace: EventTrace
    clock: Clock

    @property
    def ctx(self) -> AgentContext:
        return self.interceptor.ctx

    @property
    def registry(self) -> ToolRegistry:
        return self.resolver.registry

    def invoke_tool(self, tool_name: str, params: dict[str, Any]) -> Any:
        return self.interceptor.invoke_tool(tool_name, params)

    def rollback(self) -> RollbackReport:
        return self.manager.rollback()


def create_engine(
    env: ToolBackend,
    log: TransactionLog,
    *,
    tools: Iterable[ToolDefinition] | None = None,
    mcp_tools: Iterable[ToolDefinition] = (),
    api_config: ApiConfig | None = None,
    advisor: Advisor | None = None,
    policy: RetryPolicy | None = None,
    max_alternatives: int = 2,
    clock: Clock | None = None,
    seed: int = 0,
) -> Engine:
    """Build an engine around a tool backend and an open transaction log.

    ``tools`` defaults to ``env.definitions()``; ``mcp_tools`` overlay those
    by name, which is how annotated MCP declarations are brought in.
    """
    if tools is None:
        tools = env.definitions() if hasattr(env, "definitions") else [ToolDefinition(n) for n in getattr(env, "tools", {})]
    registry = ToolRegistry(tools)
    registry.overlay(mcp_tools)
    counting = CountingAdvisor(advisor or NullAdvisor())
    clock = clock or VirtualClock()
    resolver = CompensationResolver(registry, api_config, counting)
    trace = EventTrace()
    interceptor = ToolInterceptor(env, log, trace=trace)
    manager = RCManager(
        log,
        env,
        resolver,
        counting,
        interceptor,
        policy=policy,
        max_alternatives=max_alternatives,
        clock=clock,
        seed=seed,
        trace=trace,
    )
    interceptor.attach(manager)
    return Engine(log, env, resolver, counting, interceptor, manager, trace, clock)
