"""Injectable clocks. All engine delays go through one of these."""

from __future__ import annotations

import time
from typing import Protocol


class Clock(Protocol):
    def now_ms(self) -> int: ...

    def sleep(self, ms: float) -> None: ...


class VirtualClock:
    """Clock that only moves when someone sleeps on it."""

    def __init__(self, start_ms: int = 0) -> None:
        self._now = float(start_ms)
        self.slept_ms = 0.0

    def now_ms(self) -> int:
        return int(round(self._now))

    def sleep(self, ms: float) -> None:
        if ms < 0:
            raise ValueError(f"cannot sleep a negative duration: {ms}")
        self._now += ms
        self.slept_ms += ms


class RealClock:
    def now_ms(self) -> int:
        return int(time.time() * 1000)

    def sleep(self, ms: float) -> None:
        if ms > 0:
            time.sleep(ms / 1000.0)
