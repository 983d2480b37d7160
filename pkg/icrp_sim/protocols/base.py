from __future__ import annotations

from typing import Any, Callable, Optional

import numpy as np

from ..events import EventId, EventKind, EventQueue
from ..metrics import MetricsCollector


class BaseLayer:
    """Shared plumbing for one protocol layer of one node."""

    def __init__(
        self,
        *,
        node_id: int,
        queue: EventQueue,
        metrics: MetricsCollector,
        rng: Optional[np.random.Generator] = None,
    ):
        self.node_id = node_id
        self.queue = queue
        self.metrics = metrics
        self.rng = rng if rng is not None else np.random.default_rng(node_id)

    @property
    def now(self) -> float:
        return self.queue.now

    def _after(
        self, delay: float, handler: Callable[[], Any], kind: EventKind = EventKind.TIMER
    ) -> EventId:
        return self.queue.schedule_in(delay, self.node_id, kind, handler)

    def _cancel(self, event_id: Optional[EventId]) -> bool:
        if event_id is None:
            return False
        return self.queue.cancel(event_id)

    def _uniform_open(self, high: float) -> float:
        """Uniform draw in (0, high]."""
        return high * (1.0 - float(self.rng.random()))
