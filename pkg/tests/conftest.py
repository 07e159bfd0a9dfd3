from __future__ import annotations

from pathlib import Path

import pytest

from rac.advisor import RuleTableAdvisor
from rac.clock import VirtualClock
from rac.engine import create_engine
from rac.simenv import SimEnvironment, build_environment, load_scenario
from rac.simenv.builtin import travel_tools
from rac.txlog import TransactionLog

ROOT = Path(__file__).resolve().parent.parent
SCENARIOS = ROOT / "scenarios"
GOLDEN = Path(__file__).resolve().parent / "golden"


@pytest.fixture
def scenario_dir() -> Path:
    return SCENARIOS


@pytest.fixture
def clock() -> VirtualClock:
    return VirtualClock()


@pytest.fixture
def log(tmp_path, clock):
    with TransactionLog("run-1", tmp_path / "run-1.log.jsonl", clock=clock, durable=False) as lg:
        yield lg


@pytest.fixture
def travel_env(clock) -> SimEnvironment:
    return SimEnvironment(travel_tools(), clock=clock)


def travel_engine(env, log, clock, **kw):
    """Engine over the travel tools with every forward tool paired by config."""
    from rac.compreg import ApiConfig

    config = ApiConfig(
        {
            "book_flight": "cancel_flight",
            "book_hotel": "cancel_hotel",
            "book_car": "cancel_car",
            "charge_payment": "refund_payment",
        },
        {
            "book_flight": "booking_ref=result.confirmation_ref",
            "book_hotel": "res_id=result.reservation_id",
            "book_car": "rental_id=result.rental_id",
            "charge_payment": "charge_id=result.charge_id",
        },
    )
    kw.setdefault("advisor", RuleTableAdvisor())
    return create_engine(env, log, api_config=config, clock=clock, **kw)


def golden_scenario(name: str):
    return load_scenario(SCENARIOS / name)


def fresh_env(name: str, clock=None):
    return build_environment(golden_scenario(name), clock=clock or VirtualClock())


# -- acceptance reporting ------------------------------------------------------

_criteria: dict[int, tuple[str, str, float]] = {}


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("acceptance")
    if marker is None or call.when != "call":
        return
    number, title = marker.args
    passed = call.excinfo is None
    prev = _criteria.get(number)
    ok = passed and (prev is None or prev[0] == "PASS")
    elapsed = call.duration + (prev[2] if prev else 0.0)
    _criteria[number] = ("PASS" if ok else "FAIL", title, elapsed)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        verdict, title, elapsed = _criteria[number]
        terminalreporter.write_line(f"{verdict} criterion {number}: {title} ({elapsed:.2f}s)")
