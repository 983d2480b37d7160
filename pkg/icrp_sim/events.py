"""Deterministic event scheduler: total order on (time, seq)."""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Optional

from .errors import ContractViolation

EventId = int
TIME_QUANTUM_S = 1e-6


def quantize(t: float) -> float:
    """Round a time to the microsecond grid every timer lives on."""
    return round(t * 1_000_000) / 1_000_000


class EventKind(Enum):
    TX_START = "tx-start"
    TX_END = "tx-end"
    ARRIVAL_START = "arrival-start"
    ARRIVAL_END = "arrival-end"
    TIMER = "timer"


@dataclass(frozen=True)
class Event:
    time: float
    seq: int
    target: int
    kind: EventKind
    handler: Callable[[], Any] = field(compare=False, repr=False)


class EventQueue:
    def __init__(self, *, trace: bool = False):
        self._heap: list[tuple[float, int, Event]] = []
        self._pending: dict[EventId, Event] = {}
        self._seq = 0
        self.now = 0.0
        self.processed = 0
        self.trace: Optional[list[tuple[float, int, int, str]]] = [] if trace else None

    def __len__(self) -> int:
        return len(self._pending)

    def schedule(
        self,
        time: float,
        target: int,
        kind: EventKind,
        handler: Callable[[], Any],
    ) -> EventId:
        time = quantize(time)
        if time < self.now:
            raise ContractViolation(
                f"cannot schedule {kind.value} for node {target} at t={time} (now={self.now})"
            )
        seq = self._seq
        self._seq += 1
        event = Event(time=time, seq=seq, target=target, kind=kind, handler=handler)
        self._pending[seq] = event
        heapq.heappush(self._heap, (time, seq, event))
        return seq

    def schedule_in(
        self, delay: float, target: int, kind: EventKind, handler: Callable[[], Any]
    ) -> EventId:
        return self.schedule(self.now + max(0.0, delay), target, kind, handler)

    def cancel(self, event_id: EventId) -> bool:
        return self._pending.pop(event_id, None) is not None

    def peek_time(self) -> Optional[float]:
        while self._heap and self._heap[0][1] not in self._pending:
            heapq.heappop(self._heap)
        return self._heap[0][0] if self._heap else None

    def step(self) -> Optional[Event]:
        while self._heap:
            _time, seq, event = heapq.heappop(self._heap)
            if self._pending.pop(seq, None) is None:
                continue
            self.now = event.time
            self.processed += 1
            if self.trace is not None:
                self.trace.append((event.time, event.seq, event.target, event.kind.value))
            event.handler()
            return event
        return None

    def run(self, until: float) -> int:
        """Process every event with time <= until; the clock ends at until."""
        count = 0
        while True:
            nxt = self.peek_time()
            if nxt is None or nxt > until:
                break
            self.step()
            count += 1
        self.now = max(self.now, quantize(until))
        return count
