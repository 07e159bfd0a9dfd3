"""Simulated tool environments used to exercise the engine."""

from rac.simenv.environment import (
    DisruptionMode,
    DisruptionSpec,
    Effect,
    EnvironmentConfigError,
    LedgerVerdict,
    RunOutcome,
    SimEnvironment,
    ToolError,
    ToolKind,
    ToolSpec,
    ledger_is_clean,
)
from rac.simenv.scenario import ConfigError, ScenarioSpec, build_environment, load_scenario, parse_scenario

__all__ = [
    "ConfigError",
    "DisruptionMode",
    "DisruptionSpec",
    "Effect",
    "EnvironmentConfigError",
    "LedgerVerdict",
    "RunOutcome",
    "ScenarioSpec",
    "SimEnvironment",
    "ToolError",
    "ToolKind",
    "ToolSpec",
    "build_environment",
    "ledger_is_clean",
    "load_scenario",
    "parse_scenario",
]
