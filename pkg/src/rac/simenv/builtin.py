"""Built-in tool sets and scripted agents for the simulated scenarios."""

from __future__ import annotations

from typing import Any

from rac.simenv.environment import ToolKind, ToolSpec

FLIGHTS = [
    {"flight_id": "F100", "origin": "SFO", "destination": "JFK", "price": 420},
    {"flight_id": "F201", "origin": "SFO", "destination": "SEA", "price": 180},
    {"flight_id": "F305", "origin": "LAX", "destination": "ORD", "price": 260},
    {"flight_id": "F410", "origin": "BOS", "destination": "MIA", "price": 310},
]


def _flight_tools() -> list[ToolSpec]:
    return [
        ToolSpec(
            "search_flights",
            ToolKind.READ,
            "List available flights",
            optional=("origin", "destination"),
            returns={"flights": FLIGHTS},
        ),
        ToolSpec(
            "book_flight",
            ToolKind.EFFECT,
            "Book a seat on a flight",
            params=("flight_id", "seat_class", "passenger_id"),
            ref_field="confirmation_ref",
            ref_prefix="FL",
            echo=("flight_id", "passenger_id"),
        ),
        ToolSpec(
            "cancel_flight",
            ToolKind.COMPENSATION,
            "Cancel a flight booking",
            params=("booking_ref",),
            reverses="book_flight",
            ref_param="booking_ref",
        ),
    ]


def travel_tools() -> list[ToolSpec]:
    return _flight_tools() + [
        ToolSpec(
            "book_hotel",
            ToolKind.EFFECT,
            "Reserve a hotel room",
            params=("hotel_id", "nights", "guest"),
            ref_field="reservation_id",
            ref_prefix="HT",
            echo=("hotel_id", "nights"),
        ),
        ToolSpec(
            "cancel_hotel",
            ToolKind.COMPENSATION,
            "Cancel a hotel reservation",
            params=("res_id",),
            reverses="book_hotel",
            ref_param="res_id",
        ),
        ToolSpec(
            "book_car",
            ToolKind.EFFECT,
            "Rent a car",
            params=("car_class", "pickup", "days"),
            ref_field="rental_id",
            ref_prefix="CR",
            echo=("car_class",),
        ),
        ToolSpec(
            "cancel_car",
            ToolKind.COMPENSATION,
            "Cancel a car rental",
            params=("rental_id",),
            reverses="book_car",
            ref_param="rental_id",
        ),
        ToolSpec(
            "charge_payment",
            ToolKind.EFFECT,
            "Charge the traveller's card",
            params=("amount", "booking_ref"),
            ref_field="charge_id",
            ref_prefix="PY",
            echo=("amount",),
            decline_above=("amount", 5000.0),
        ),
        ToolSpec(
            "refund_payment",
            ToolKind.COMPENSATION,
            "Refund a card charge",
            params=("charge_id",),
            reverses="charge_payment",
            ref_param="charge_id",
        ),
    ]


def jobshop_tools(machines: int = 3) -> list[ToolSpec]:
    tools = [
        ToolSpec(
            "list_jobs",
            ToolKind.READ,
            "List jobs waiting for a machine",
            returns={"jobs": [{"job_id": f"J{i}", "duration": 2 + i % 3} for i in range(1, 5)]},
        )
    ]
    for m in range(1, machines + 1):
        tools.append(
            ToolSpec(
                f"assign_machine_{m}",
                ToolKind.EFFECT,
                f"Schedule a job on machine {m}",
                params=("job_id", "slot"),
                ref_field="assignment_id",
                ref_prefix=f"M{m}",
                echo=("job_id",),
            )
        )
        tools.append(
            ToolSpec(
                f"unassign_machine_{m}",
                ToolKind.COMPENSATION,
                f"Remove a job from machine {m}",
                params=("assignment_id",),
                reverses=f"assign_machine_{m}",
                ref_param="assignment_id",
            )
        )
    return tools


def group_booking_tools() -> list[ToolSpec]:
    return _flight_tools()


TOOLSETS = {
    "travel": travel_tools,
    "jobshop": jobshop_tools,
    "group_booking": group_booking_tools,
}


# Scripted agents. "${N.path}" in a param is replaced by that path in the
# result of script step N (1-based).
SCRIPTS: dict[str, list[dict[str, Any]]] = {
    "travel": [
        {"tool": "search_flights", "params": {"origin": "SFO", "destination": "JFK"}},
        {"tool": "book_flight", "params": {"flight_id": "F100", "seat_class": "economy", "passenger_id": "P-ALICE"}},
        {"tool": "book_hotel", "params": {"hotel_id": "H-MIDTOWN", "nights": 3, "guest": "P-ALICE"}},
        {"tool": "book_car", "params": {"car_class": "compact", "pickup": "JFK", "days": 3}},
        {"tool": "charge_payment", "params": {"amount": 1260, "booking_ref": "${2.confirmation_ref}"}},
    ],
    "jobshop": [
        {"tool": "list_jobs", "params": {}},
        {"tool": "assign_machine_1", "params": {"job_id": "J1", "slot": "T0"}},
        {"tool": "assign_machine_2", "params": {"job_id": "J2", "slot": "T0"}},
        {"tool": "assign_machine_3", "params": {"job_id": "J3", "slot": "T0"}},
        {"tool": "assign_machine_1", "params": {"job_id": "J4", "slot": "T1"}},
    ],
    "group_booking": [
        {"tool": "book_flight", "params": {"flight_id": "F201", "seat_class": "economy", "passenger_id": "P-1"}},
        {"tool": "book_flight", "params": {"flight_id": "F305", "seat_class": "economy", "passenger_id": "P-2"}},
        {"tool": "book_flight", "params": {"flight_id": "F410", "seat_class": "economy", "passenger_id": "P-3"}},
    ],
}
