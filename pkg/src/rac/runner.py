"""Run a scenario's scripted agent through the engine and report on it."""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable

from rac.clock import Clock, RealClock, VirtualClock
from rac.compreg import read_path
from rac.engine import Engine, create_engine
from rac.interceptor import MessageSource, RecoverySummary
from rac.rcmanager import EntryOutcome, RollbackReport
from rac.regraph import build_graph, to_dot
from rac.simenv.environment import LedgerVerdict, RunOutcome, SimEnvironment, ledger_is_clean
from rac.simenv.scenario import ConfigError, ScenarioSpec, build_environment
from rac.txlog import RESULT_STATUSES, Status, TransactionLog, dumps

_REF = re.compile(r"^\$\{(\d+)\.([^}]+)\}$")


class SimulatedCrash(BaseException):
    """Stands in for the process dying; not an Exception so nothing swallows it."""


@dataclass
class RunCounts:
    retries: int = 0
    alternatives: int = 0
    compensations: int = 0
    advisor_calls: int = 0


@dataclass
class RunReport:
    scenario: str
    run_id: str
    seed: int
    outcome: RunOutcome
    counts: RunCounts
    wall_time_ms: int
    ledger_verdict: LedgerVerdict
    steps_completed: int
    steps_total: int
    rollback: RollbackReport | None = None

    @property
    def halted_at(self) -> int | None:
        return self.rollback.halted_at if self.rollback else None

    @property
    def exit_code(self) -> int:
        return exit_code_for(self.outcome)

    def to_dict(self) -> dict[str, Any]:
        return {
            "type": "run_report",
            "scenario": self.scenario,
            "run_id": self.run_id,
            "seed": self.seed,
            "outcome": self.outcome.value,
            "counts": {
                "retries": self.counts.retries,
                "alternatives": self.counts.alternatives,
                "compensations": self.counts.compensations,
                "advisor_calls": self.counts.advisor_calls,
            },
            "wall_time_ms": self.wall_time_ms,
            "ledger": {"clean": self.ledger_verdict.clean, "violations": self.ledger_verdict.violations},
            "steps": {"completed": self.steps_completed, "total": self.steps_total},
            "halted_at": self.halted_at,
        }

    def to_jsonl(self) -> str:
        lines = [dumps(self.to_dict())]
        if self.rollback is not None:
            for e in self.rollback.entries:
                lines.append(dumps({"type": "rollback_entry", **e.to_dict()}))
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        c = self.counts
        verdict = "CLEAN" if self.ledger_verdict.clean else "DIRTY"
        lines = [
            f"scenario:      {self.scenario} (run {self.run_id}, seed {self.seed})",
            f"outcome:       {self.outcome.value}",
            f"steps:         {self.steps_completed}/{self.steps_total} completed",
            f"retries:       {c.retries}",
            f"alternatives:  {c.alternatives}",
            f"compensations: {c.compensations}",
            f"advisor calls: {c.advisor_calls}",
            f"virtual time:  {self.wall_time_ms} ms",
            f"ledger:        {verdict}",
        ]
        lines += [f"  violation: {v}" for v in self.ledger_verdict.violations]
        if self.rollback is not None:
            lines.append("rollback:")
            lines += ["  " + line for line in self.rollback.summary_text.splitlines()]
        return "\n".join(lines) + "\n"


EXIT_CODES = {
    RunOutcome.SUCCESS: 0,
    RunOutcome.ROLLED_BACK_CLEAN: 0,
    RunOutcome.HALTED_DIRTY: 2,
}


def exit_code_for(outcome: RunOutcome) -> int:
    return EXIT_CODES[outcome]


@dataclass
class RunResult:
    report: RunReport
    engine: Engine
    env: SimEnvironment
    log_path: Path
    results: dict[int, Any] = field(default_factory=dict)

    def graph_dot(self) -> str:
        """Graph of everything that completed, including what was later compensated."""
        records = [
            replace(r, status=Status.COMPLETED) if r.status in RESULT_STATUSES else r for r in self.engine.log.get_all()
        ]
        return to_dot(build_graph(records), records)


def run_id_for(scenario: ScenarioSpec, seed: int) -> str:
    return f"{scenario.name}-seed{seed}"


def substitute(value: Any, results: dict[int, Any]) -> Any:
    """Replace ``"${N.path}"`` strings with values from earlier step results."""
    if isinstance(value, dict):
        return {k: substitute(v, results) for k, v in value.items()}
    if isinstance(value, list):
        return [substitute(v, results) for v in value]
    if isinstance(value, str):
        m = _REF.match(value)
        if m:
            step, path = int(m.group(1)), m.group(2)
            if step not in results:
                raise ConfigError(f"{value}: step {step} has no result", field="script")
            try:
                return read_path(results[step], path)
            except KeyError:
                raise ConfigError(f"{value}: path not in step {step} result", field="script") from None
    return value


def _engine_for(
    scenario: ScenarioSpec, env: SimEnvironment, log: TransactionLog, clock: Clock, seed: int
) -> Engine:
    return create_engine(
        env,
        log,
        mcp_tools=scenario.mcp_definitions(),
        api_config=scenario.api_config(),
        advisor=scenario.make_advisor(),
        policy=scenario.retry_policy(),
        max_alternatives=scenario.policy.max_alternatives,
        clock=clock,
        seed=seed,
    )


def _raise_crash() -> None:
    raise SimulatedCrash()


def run_scenario(
    scenario: ScenarioSpec,
    log_dir: str | os.PathLike[str],
    *,
    seed: int | None = None,
    max_steps: int | None = None,
    real_time: bool = False,
    durable: bool = True,
    persist_env: bool = True,
    crash_after_append: int | None = None,
    on_crash: Callable[[], None] = _raise_crash,
) -> RunResult:
    """Execute the scenario's script; refuses to reuse an existing run log."""
    seed = scenario.seed if seed is None else seed
    clock: Clock = RealClock() if real_time else VirtualClock()
    run_id = run_id_for(scenario, seed)
    log_dir = Path(log_dir)
    log_path = log_dir / f"{run_id}.log.jsonl"
    if log_path.exists():
        raise ConfigError(f"log {log_path} already exists; use another --log-dir or `rac recover`", field="log_dir")
    state_path = log_dir / f"{run_id}.env.json" if persist_env else None
    log = TransactionLog(run_id, log_path, clock=clock, durable=durable)
    try:
        env = build_environment(scenario, clock=clock, state_path=state_path)
    except BaseException:
        log.close()
        if log_path.stat().st_size == 0:
            log_path.unlink()  # nothing ran; don't block a corrected re-run
        raise
    if crash_after_append is not None:
        def crash_hook(rec: Any) -> None:
            if len(log) >= crash_after_append:
                on_crash()

        log.on_append.append(crash_hook)
    engine = _engine_for(scenario, env, log, clock, seed)
    start = clock.now_ms()

    steps = scenario.steps()
    if max_steps is not None:
        steps = steps[:max_steps]
    results: dict[int, Any] = {}
    rollback = None
    completed = 0
    try:
        for i, step in enumerate(steps, 1):
            params = substitute(step.get("params", {}), results)
            engine.ctx.add(MessageSource.AGENT, f"call {step['tool']} {json.dumps(params, sort_keys=True)}")
            out = engine.invoke_tool(step["tool"], params)
            if isinstance(out, RecoverySummary):
                rollback = out.outcome.report
                break
            results[i] = out
            completed += 1
    finally:
        log.close()

    if rollback is None:
        outcome = RunOutcome.SUCCESS
    elif rollback.halted_at is not None:
        outcome = RunOutcome.HALTED_DIRTY
    else:
        outcome = RunOutcome.ROLLED_BACK_CLEAN
    report = _report(scenario, run_id, seed, outcome, engine, env, rollback, clock.now_ms() - start, completed, len(steps))
    return RunResult(report, engine, env, log_path, results)


def _report(
    scenario: ScenarioSpec,
    run_id: str,
    seed: int,
    outcome: RunOutcome,
    engine: Engine,
    env: SimEnvironment,
    rollback: RollbackReport | None,
    elapsed: int,
    completed: int,
    total: int,
) -> RunReport:
    counts = RunCounts(
        retries=engine.manager.retries_made,
        alternatives=engine.manager.alternatives_tried,
        compensations=sum(e.outcome == EntryOutcome.COMPENSATED for e in rollback.entries) if rollback else 0,
        advisor_calls=engine.advisor.total_calls,
    )
    return RunReport(
        scenario=scenario.name,
        run_id=run_id,
        seed=seed,
        outcome=outcome,
        counts=counts,
        wall_time_ms=elapsed,
        ledger_verdict=ledger_is_clean(env, outcome),
        steps_completed=completed,
        steps_total=total,
        rollback=rollback,
    )


def recover_run(
    scenario: ScenarioSpec,
    log_dir: str | os.PathLike[str],
    *,
    seed: int | None = None,
    durable: bool = True,
) -> RunResult:
    """Reopen a run that died mid-flight and roll back everything it completed."""
    seed = scenario.seed if seed is None else seed
    run_id = run_id_for(scenario, seed)
    log_dir = Path(log_dir)
    log_path = log_dir / f"{run_id}.log.jsonl"
    state_path = log_dir / f"{run_id}.env.json"
    if not log_path.exists():
        raise ConfigError(f"no log for run {run_id} in {log_dir}", field="log_dir")
    clock = VirtualClock()
    env = build_environment(scenario, clock=clock, inject=False)
    if state_path.exists():
        env.restore(state_path)
    log = TransactionLog(run_id, log_path, clock=clock, durable=durable)
    engine = _engine_for(scenario, env, log, clock, seed)
    try:
        rollback = engine.rollback()
    finally:
        log.close()
    outcome = RunOutcome.HALTED_DIRTY if rollback.halted_at is not None else RunOutcome.ROLLED_BACK_CLEAN
    done = sum(1 for r in log.get_all() if r.status not in (Status.PENDING, Status.FAILED))
    report = _report(scenario, run_id, seed, outcome, engine, env, rollback, 0, done, len(scenario.steps()))
    return RunResult(report, engine, env, log_path)
