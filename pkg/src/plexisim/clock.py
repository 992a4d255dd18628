"""Discrete simulation clock shared by the ledger, workflow, and aggregator."""

from __future__ import annotations

# One market window step is 30 minutes of simulated time.
STEP_MS = 30 * 60 * 1000


class SimClock:
    """Monotone millisecond counter; all modules share one instance."""

    def __init__(self, start_ms: int = 0):
        self._now = int(start_ms)

    def now(self) -> int:
        return self._now

    def advance(self, delta_ms: int) -> int:
        if delta_ms < 0:
            raise ValueError("clock cannot move backwards")
        self._now += int(delta_ms)
        return self._now

    def advance_to(self, t_ms: int) -> int:
        if t_ms < self._now:
            raise ValueError("clock cannot move backwards")
        self._now = int(t_ms)
        return self._now

    def __repr__(self) -> str:
        return f"SimClock(t={self._now}ms)"
