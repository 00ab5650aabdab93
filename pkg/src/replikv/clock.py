"""Injectable time sources.

Protocol code only ever sees ``now_ms()``; whether that is the wall clock
(optionally skewed) or simulated time is a transport concern, which keeps
timestamp-dependent behaviour reproducible in tests.
"""

from __future__ import annotations

import time


class Clock:
    def now_ms(self) -> int:
        raise NotImplementedError


class SystemClock(Clock):
    """Wall clock in milliseconds, with an optional constant skew."""

    def __init__(self, offset_ms: int = 0):
        self.offset_ms = offset_ms

    def now_ms(self) -> int:
        return time.time_ns() // 1_000_000 + self.offset_ms


class ManualClock(Clock):
    """Test clock advanced explicitly."""

    def __init__(self, start_ms: int = 0):
        self.t = start_ms

    def now_ms(self) -> int:
        return self.t

    def advance(self, ms: int):
        self.t += ms
