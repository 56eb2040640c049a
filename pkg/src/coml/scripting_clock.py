"""Virtual clock for deterministic script replays."""

from __future__ import annotations


class VirtualClock:
    """Monotone millisecond clock advanced by the script dispatcher."""

    def __init__(self, start_ms: int = 0):
        self.now_ms = start_ms

    def advance_to(self, ms: int):
        self.now_ms = max(self.now_ms, ms)

    def ms(self) -> int:
        return self.now_ms

    def s(self) -> float:
        return self.now_ms / 1000.0
