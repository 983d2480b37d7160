"""
Sensor traffic: a measurement every period, sent after normal/alarm
decimation, or at a constant interval when an override is set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Optional, Sequence

import numpy as np

from .events import quantize

AlarmWindows = Mapping[int, Sequence[tuple[float, float]]]


@dataclass(frozen=True)
class TrafficConfig:
    measurement_period_s: float = 6.0
    normal_decimation: int = 7
    alarm_decimation: int = 3
    payload_bits: int = 420
    alarm_schedule: AlarmWindows = field(default_factory=dict)
    # node -> window_s: in alarm for the first window_s of every hour, however long the run.
    hourly_alarm: Mapping[int, float] = field(default_factory=dict)
    constant_interval_override_s: Optional[float] = None
    phase_offsets: bool = True
    # None means every sensor; an empty tuple means no traffic at all.
    sources: Optional[tuple[int, ...]] = None

    def __post_init__(self) -> None:
        if self.normal_decimation < 1 or self.alarm_decimation < 1:
            raise ValueError("decimations must be >= 1")
        if not self.measurement_period_s > 0:
            raise ValueError("measurement_period_s must be > 0")
        if self.payload_bits <= 0:
            raise ValueError("payload_bits must be > 0")
        if self.constant_interval_override_s is not None and not self.constant_interval_override_s > 0:
            raise ValueError("constant_interval_override_s must be > 0")
        if any(not 0 <= w <= 3600 for w in self.hourly_alarm.values()):
            raise ValueError("hourly alarm window_s must be within [0, 3600]")

    @property
    def nominal_interval_s(self) -> float:
        if self.constant_interval_override_s is not None:
            return self.constant_interval_override_s
        return self.measurement_period_s * self.normal_decimation


def alarm_hourly_schedule(
    nodes: Iterable[int], duration_s: float, window_s: float = 900.0
) -> dict[int, tuple[tuple[float, float], ...]]:
    """Alarm for window_s at the top of every simulated hour."""
    if not 0 <= window_s <= 3600:
        raise ValueError("window_s must be within [0, 3600]")
    hours = max(0, math.ceil(duration_s / 3600.0))
    windows = tuple((3600.0 * k, float(window_s)) for k in range(hours)) if window_s > 0 else ()
    return {node: windows for node in nodes}


def permanent_alarm(nodes: Iterable[int], duration_s: float) -> dict[int, tuple[tuple[float, float], ...]]:
    return {node: ((0.0, float(duration_s)),) for node in nodes}


class TrafficSchedule:
    def __init__(self, config: TrafficConfig, sources: Sequence[int], rng: Optional[np.random.Generator] = None):
        self.config = config
        self.sources = tuple(sorted(sources))
        span = config.nominal_interval_s
        self._phase: dict[int, float] = {}
        for node in self.sources:
            if config.phase_offsets and rng is not None:
                self._phase[node] = quantize(float(rng.uniform(0.0, span)))
            else:
                self._phase[node] = 0.0

    def phase(self, node: int) -> float:
        return self._phase[node]

    def in_alarm(self, node: int, t: float) -> bool:
        hourly = self.config.hourly_alarm.get(node)
        if hourly is not None and t % 3600.0 < hourly:
            return True
        return any(start <= t < start + dur for start, dur in self.config.alarm_schedule.get(node, ()))

    def decimation(self, node: int, t: float) -> int:
        cfg = self.config
        return cfg.alarm_decimation if self.in_alarm(node, t) else cfg.normal_decimation

    def next_emission(self, node: int, now: float, *, inclusive: bool = False) -> float:
        """First emission after now (at or after, when inclusive)."""
        cfg = self.config
        phase = self._phase[node]
        step = cfg.constant_interval_override_s or cfg.measurement_period_s
        k = max(0, math.floor((now - phase) / step))

        def tick(i: int) -> float:
            return quantize(phase + i * step)

        while tick(k) < now or (not inclusive and tick(k) == now):
            k += 1
        while k > 0 and (tick(k - 1) > now or (inclusive and tick(k - 1) == now)):
            k -= 1
        if cfg.constant_interval_override_s is not None:
            return tick(k)
        while k % self.decimation(node, tick(k)) != 0:
            k += 1
        return tick(k)

    def emissions(self, node: int, until: float) -> Iterator[float]:
        t = self.next_emission(node, 0.0, inclusive=True)
        while t <= until:
            yield t
            t = self.next_emission(node, t)
