from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import travel_engine
from rac.clock import VirtualClock
from rac.engine import create_engine
from rac.interceptor import FunctionTools, MessageSource, RecoverySummary, UnknownToolError
from rac.simenv import DisruptionMode, DisruptionSpec, SimEnvironment
from rac.simenv.builtin import travel_tools
from rac.txlog import Status, TransactionLog

FLIGHT = {"flight_id": "F100", "seat_class": "economy", "passenger_id": "P-A"}


def test_success_returns_raw_result_and_logs(travel_env, log, clock):
    engine = travel_engine(travel_env, log, clock)
    out = engine.invoke_tool("book_flight", FLIGHT)
    assert out == {"confirmation_ref": "FL-0001", "status": "confirmed", "flight_id": "F100", "passenger_id": "P-A"}
    (rec,) = log.get_all()
    assert rec.status is Status.COMPLETED and rec.result == out
    assert engine.ctx.messages[-1].source is MessageSource.TOOL


def test_unknown_tool_rejected_before_logging(travel_env, log, clock):
    engine = travel_engine(travel_env, log, clock)
    with pytest.raises(UnknownToolError):
        engine.invoke_tool("teleport", {})
    assert len(log) == 0 and travel_env.call_trace == []


def test_recovery_notes_in_context(travel_env, log, clock):
    travel_env.inject(DisruptionSpec("book_flight", DisruptionMode.TRANSIENT, "RATE_LIMITED"))
    engine = travel_engine(travel_env, log, clock)
    engine.invoke_tool("book_flight", FLIGHT)
    (note,) = engine.ctx.recovery_messages()
    assert "recovered after 1 retry" in note


def test_detector_exceptions_are_contained(travel_env, log, clock):
    engine = travel_engine(travel_env, log, clock)

    def broken(rec):
        raise RuntimeError("detector bug")

    engine.interceptor.register_error_detector(broken)
    assert engine.invoke_tool("book_flight", FLIGHT)["status"] == "confirmed"


def test_first_detector_wins_and_handles_remove(travel_env, log, clock):
    engine = travel_engine(travel_env, log, clock)
    h1 = engine.interceptor.register_error_detector(lambda r: "first")
    engine.interceptor.register_error_detector(lambda r: "second")
    out = engine.invoke_tool("search_flights", {})
    # search has no compensation so the rollback is trivially clean
    assert isinstance(out, RecoverySummary)
    assert log.get(1).error == "SEMANTIC_ERROR: first"
    h1.remove()
    h1.remove()
    out = engine.invoke_tool("search_flights", {})
    assert "SEMANTIC_ERROR: second" in out.text


def test_function_tools_backend(tmp_path):
    calls = []

    def charge(amount):
        calls.append(amount)
        if amount > 100:
            raise ValueError("limit")
        return {"charge_id": f"C{len(calls)}"}

    backend = FunctionTools({"charge": charge})
    with TransactionLog("f", tmp_path / "f.jsonl", clock=VirtualClock(), durable=False) as log:
        engine = create_engine(backend, log)
        assert engine.invoke_tool("charge", {"amount": 5}) == {"charge_id": "C1"}
        out = engine.invoke_tool("charge", {"amount": 500})
        assert isinstance(out, RecoverySummary)
        # ValueError has no code: advisor abstains, so it is retried 3 times
        assert calls == [5, 500, 500, 500, 500]
        assert "ValueError: limit" in out.text


def test_pending_is_durable_before_effect(tmp_path):
    clock = VirtualClock()
    env = SimEnvironment(travel_tools(), clock=clock)
    path = tmp_path / "d.jsonl"
    seen = []
    with TransactionLog("d", path, clock=clock, durable=True) as log:
        original = env.call

        def spying_call(tool, params):
            on_disk = path.read_text().splitlines()
            seen.append((tool, params, on_disk[-1]))
            return original(tool, params)

        env.call = spying_call
        engine = travel_engine(env, log, clock)
        engine.invoke_tool("book_flight", FLIGHT)
    tool, params, last = seen[0]
    assert '"status":"PENDING"' in last and '"tool_name":"book_flight"' in last


actions = st.lists(
    st.tuples(
        st.sampled_from(["book_flight", "book_hotel", "book_car", "search_flights"]),
        st.sampled_from(["none", "transient", "permanent"]),
    ),
    min_size=1,
    max_size=6,
)
PARAMS = {
    "book_flight": FLIGHT,
    "book_hotel": {"hotel_id": "H", "nights": 1, "guest": "G"},
    "book_car": {"car_class": "c", "pickup": "p", "days": 1},
    "search_flights": {},
}


@settings(max_examples=80, deadline=None)
@given(plan=actions)
def test_returns_only_results_or_summaries_and_context_grows(tmp_path_factory, plan):
    clock = VirtualClock()
    env = SimEnvironment(travel_tools(), clock=clock)
    path = tmp_path_factory.mktemp("i") / "l.jsonl"
    with TransactionLog("i", path, clock=clock, durable=False) as log:
        engine = travel_engine(env, log, clock)
        sizes = [0]
        snapshot = []
        for tool, fault in plan:
            if fault == "transient":
                env.inject(DisruptionSpec(tool, DisruptionMode.TRANSIENT, "TIMEOUT"))
            elif fault == "permanent":
                env.inject(DisruptionSpec(tool, DisruptionMode.PERMANENT, "SOLD_OUT"))
            out = engine.invoke_tool(tool, PARAMS[tool])
            assert isinstance(out, (dict, RecoverySummary))
            assert not isinstance(out, BaseException)
            msgs = engine.ctx.messages
            assert len(msgs) > sizes[-1]
            assert msgs[: len(snapshot)] == snapshot
            snapshot = list(msgs)
            sizes.append(len(msgs))
            if isinstance(out, RecoverySummary):
                break
        appended = [(r.tool_name, r.params) for r in log.get_all()]
    # every forward execution the env saw has a PENDING record with the same call
    forward = [t for t in env.call_trace if not t.tool.startswith("cancel_")]
    for entry in forward:
        assert (entry.tool, entry.params) in appended
