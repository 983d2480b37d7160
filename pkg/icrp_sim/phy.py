"""
Modem model: transport formats, frame timing, fragmentation, source-level
calibration and the half-duplex receive state of one modem.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Any, Mapping, Optional

from .channel import (
    Arrival,
    ChannelParams,
    DecodeOutcome,
    ReceiverView,
    decode_outcome,
    transmission_loss,
)
from .errors import ContractViolation


class TransportFormatId(IntEnum):
    TF1 = 1
    TF2 = 2
    TF3 = 3

    @classmethod
    def parse(cls, value: Any) -> "TransportFormatId":
        if isinstance(value, cls):
            return value
        if isinstance(value, int) and not isinstance(value, bool):
            return cls(value)
        return cls[str(value).strip().upper()]

    def step(self, delta: int, ceiling: "TransportFormatId") -> "TransportFormatId":
        return TransportFormatId(min(max(int(self) + delta, int(TransportFormatId.TF1)), int(ceiling)))


PAYLOAD_RATES_BPS = {
    TransportFormatId.TF1: 200,
    TransportFormatId.TF2: 400,
    TransportFormatId.TF3: 1700,
}


@dataclass(frozen=True)
class TransportFormat:
    id: TransportFormatId
    payload_rate_bps: int
    sync_overhead_s: float = 0.0

    def __post_init__(self) -> None:
        if PAYLOAD_RATES_BPS.get(self.id) != self.payload_rate_bps:
            raise ValueError(f"{self.id.name} runs at {PAYLOAD_RATES_BPS[self.id]} bps")
        if self.sync_overhead_s < 0:
            raise ValueError("sync_overhead_s must be >= 0")


@dataclass(frozen=True)
class Frame:
    payload_bits: int
    tf: TransportFormatId
    kind: Any = None
    fragment_index: int = 0
    fragment_total: int = 1

    def __post_init__(self) -> None:
        if self.payload_bits <= 0:
            raise ValueError("payload_bits must be > 0")
        if not 0 <= self.fragment_index < self.fragment_total:
            raise ValueError("fragment_index must be < fragment_total")


def frame_duration(payload_bits: int, tf: TransportFormat) -> float:
    if payload_bits <= 0:
        raise ValueError("payload_bits must be > 0")
    return tf.sync_overhead_s + payload_bits / tf.payload_rate_bps


def fragment(
    message_bits: int, tf: TransportFormat, max_frame_duration_s: float, kind: Any = None
) -> list[Frame]:
    """Split a message into the fewest frames that fit the duration cap, balanced."""
    if max_frame_duration_s <= tf.sync_overhead_s:
        raise ValueError("frame duration cap must exceed the sync overhead")
    if message_bits <= 0:
        raise ValueError("message_bits must be > 0")
    per_frame = math.floor((max_frame_duration_s - tf.sync_overhead_s) * tf.payload_rate_bps + 1e-9)
    if per_frame < 1:
        raise ValueError("frame duration cap leaves no room for a single bit")
    total = -(-message_bits // per_frame)
    base, extra = divmod(message_bits, total)
    return [
        Frame(payload_bits=base + (1 if i < extra else 0), tf=tf.id, kind=kind,
              fragment_index=i, fragment_total=total)
        for i in range(total)
    ]


def calibrate_source_level(max_range_m: float, params: ChannelParams) -> float:
    """SL putting an interference-free link at max_range exactly on the threshold."""
    if not max_range_m > 0:
        raise ValueError("max_range_m must be > 0")
    return params.threshold_db + params.noise_db + transmission_loss(max_range_m, params)


@dataclass(frozen=True)
class PhyConfig:
    ack_bits: int = 40
    status_base_bits: int = 80
    status_hop_bits: int = 16
    sync_overhead_s: float = 0.0
    max_frame_duration_s: Optional[float] = None
    source_level_db: Optional[float] = None
    calibration_range_m: Optional[float] = None
    cs_margin_db: float = 0.0
    tf_thresholds_db: Mapping[TransportFormatId, float] = field(default_factory=dict)

    def format(self, tf: TransportFormatId) -> TransportFormat:
        return TransportFormat(tf, PAYLOAD_RATES_BPS[tf], self.sync_overhead_s)

    def frames(self, bits: int, tf: TransportFormatId, kind: Any = None) -> list[Frame]:
        fmt = self.format(tf)
        if self.max_frame_duration_s is None:
            return [Frame(payload_bits=bits, tf=tf, kind=kind)]
        return fragment(bits, fmt, self.max_frame_duration_s, kind)

    def airtime(self, bits: int, tf: TransportFormatId) -> float:
        """Duration of the back-to-back frame burst carrying a message."""
        fmt = self.format(tf)
        return sum(frame_duration(f.payload_bits, fmt) for f in self.frames(bits, tf))

    def status_bits(self, hops: int) -> int:
        return self.status_base_bits + self.status_hop_bits * hops

    def threshold_db(self, tf: TransportFormatId, params: ChannelParams) -> float:
        return self.tf_thresholds_db.get(tf, params.threshold_db)


class ModemPhase(Enum):
    IDLE = "idle"
    TX = "tx"
    RX = "rx"


class ModemState:
    """Half-duplex modem: one transmission or one locked reception at a time."""

    def __init__(self, node_id: int, params: ChannelParams, cs_margin_db: float = 0.0):
        self.node_id = node_id
        self.params = params
        self.cs_level_db = params.noise_db + cs_margin_db
        self._tx_end: Optional[float] = None
        self._lock: Optional[Arrival] = None
        self._active: dict[int, Arrival] = {}
        self._recent: deque[Arrival] = deque()
        self._tx_intervals: deque[tuple[float, float]] = deque()
        self._captured_by: dict[int, Optional[int]] = {}
        self._horizon = 0.0

    @property
    def phase(self) -> ModemPhase:
        if self._tx_end is not None:
            return ModemPhase.TX
        if self._lock is not None:
            return ModemPhase.RX
        return ModemPhase.IDLE

    @property
    def transmitting(self) -> bool:
        return self._tx_end is not None

    @property
    def locked(self) -> Optional[Arrival]:
        return self._lock

    # Transitions ------------------------------------------------------------
    def tx_begin(self, now: float, end: float) -> None:
        if self._tx_end is not None:
            raise ContractViolation(f"node {self.node_id} already transmitting")
        if end <= now:
            raise ContractViolation("transmission must last > 0 s")
        # Starting to talk abandons whatever we were listening to.
        self._lock = None
        self._tx_end = end
        self._tx_intervals.append((now, end))
        self._horizon = max(self._horizon, end - now)

    def tx_end(self, now: float) -> None:
        if self._tx_end is None:
            raise ContractViolation(f"node {self.node_id} tx_end without tx_begin")
        self._tx_end = None

    def rx_lock(self, arrival: Arrival) -> None:
        if self._tx_end is not None:
            raise ContractViolation(f"node {self.node_id} cannot lock while transmitting")
        if self._lock is not None:
            raise ContractViolation(f"node {self.node_id} already locked")
        self._lock = arrival

    def rx_release(self, arrival: Arrival) -> None:
        if self._lock is not arrival:
            raise ContractViolation(f"node {self.node_id} is not locked on arrival {arrival.arrival_id}")
        self._lock = None

    # Arrivals ---------------------------------------------------------------
    def arrival_start(self, arrival: Arrival, now: float) -> None:
        self._active[arrival.arrival_id] = arrival
        self._recent.append(arrival)
        self._horizon = max(self._horizon, arrival.end - arrival.start)
        holder: Optional[int] = None
        if self._tx_end is None:
            if self._lock is not None:
                holder = self._lock.arrival_id
            elif arrival.detectable:
                self.rx_lock(arrival)
        self._captured_by[arrival.arrival_id] = holder

    def arrival_end(self, arrival: Arrival, now: float, threshold_db: Optional[float] = None) -> DecodeOutcome:
        concurrent = [a for a in self._recent if a is not arrival and a.overlaps(arrival.start, arrival.end)]
        view = ReceiverView(
            tx_intervals=tuple(iv for iv in self._tx_intervals if iv[0] < arrival.end and arrival.start < iv[1]),
            captured_by=self._captured_by.pop(arrival.arrival_id, None),
        )
        outcome = decode_outcome(arrival, concurrent, view, self.params, threshold_db)
        if self._lock is arrival:
            self.rx_release(arrival)
        self._active.pop(arrival.arrival_id, None)
        self._prune(now)
        return outcome

    def carrier_busy(self, now: float) -> bool:
        if self._tx_end is not None or self._lock is not None:
            return True
        return any(a.level_db >= self.cs_level_db for a in self._active.values())

    def _prune(self, now: float) -> None:
        cutoff = now - self._horizon
        while self._recent and self._recent[0].end < cutoff and self._recent[0].arrival_id not in self._active:
            self._recent.popleft()
        while self._tx_intervals and self._tx_intervals[0][1] < cutoff:
            self._tx_intervals.popleft()
