"""
CSMA-Aloha with MAC ACK and ARQ for unicast data only.

Broadcast data, STATUS and ACK frames are fire-and-forget. A unicast data
transaction holds the head of the queue until it is acknowledged or its
retries are spent, then the router hears about the outcome.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Any, Optional, Protocol

import numpy as np

from ..debug import debug_log
from ..events import EventId, EventKind, EventQueue
from ..metrics import MetricsCollector
from ..phy import PhyConfig, TransportFormatId
from .base import BaseLayer

BROADCAST = -1
DEDUP_WINDOW = 256


class PduKind(Enum):
    DATA_BC = "DATA_BC"
    DATA_UC = "DATA_UC"
    STATUS_UC = "STATUS_UC"
    MAC_ACK = "MAC_ACK"


@dataclass(frozen=True)
class MacPdu:
    kind: PduKind
    src: int
    dest: int
    seq: int
    payload: Any = None
    bits: int = 1

    def __post_init__(self) -> None:
        if (self.kind is PduKind.DATA_BC) != (self.dest == BROADCAST):
            raise ValueError(f"{self.kind.value} with dest={self.dest}")
        if self.bits <= 0:
            raise ValueError("pdu must carry at least one bit")


@dataclass(frozen=True)
class MacConfig:
    backoff_window_s: Optional[float] = None
    ack_timeout_s: Optional[float] = None
    max_retx: int = 2
    ack_guard_s: float = 0.1
    ack_timeout_guard_s: float = 0.2
    queue_limit: int = 32

    def __post_init__(self) -> None:
        for name in ("backoff_window_s", "ack_timeout_s"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise ValueError(f"{name} must be > 0")
        if self.max_retx < 0:
            raise ValueError("max_retx must be >= 0")
        if self.ack_guard_s <= 0 or self.ack_timeout_guard_s <= 0:
            raise ValueError("ACK guards must be > 0")
        if self.queue_limit < 1:
            raise ValueError("queue_limit must be >= 1")


class LinkOutcome(Enum):
    DELIVERED = "delivered"
    LINK_FAILURE = "link_failure"


class Radio(Protocol):
    @property
    def transmitting(self) -> bool: ...

    def carrier_busy(self) -> bool: ...

    def start_tx(self, pdu: MacPdu, tf: TransportFormatId) -> float: ...


class UpperLayer(Protocol):
    def on_receive(self, pdu: MacPdu, tf: TransportFormatId, sinr_db: float) -> None: ...

    def on_link_result(self, pdu: MacPdu, tf: TransportFormatId, outcome: LinkOutcome) -> None: ...


class TxState(Enum):
    READY = "ready"
    BACKOFF = "backoff"
    IN_FLIGHT = "in_flight"
    AWAIT_ACK = "await_ack"


@dataclass
class Transaction:
    pdu: MacPdu
    tf: TransportFormatId
    state: TxState = TxState.READY
    attempts: int = 0
    timer: Optional[EventId] = None


class CsmaAlohaMac(BaseLayer):
    def __init__(
        self,
        *,
        node_id: int,
        queue: EventQueue,
        metrics: MetricsCollector,
        config: MacConfig,
        phy: PhyConfig,
        radio: Radio,
        rng: Optional[np.random.Generator] = None,
        data_bits: int = 420,
        max_link_range_m: float = 1200.0,
        sound_speed_mps: float = 1500.0,
    ):
        super().__init__(node_id=node_id, queue=queue, metrics=metrics, rng=rng)
        self.config = config
        self.phy = phy
        self.radio = radio
        self.data_bits = data_bits
        self.max_delay_s = max_link_range_m / sound_speed_mps
        self.upper: Optional[UpperLayer] = None
        self._queue: deque[tuple[MacPdu, TransportFormatId]] = deque()
        self._current: Optional[Transaction] = None
        self._on_air: Optional[MacPdu] = None
        self._pending_acks: deque[tuple[MacPdu, TransportFormatId]] = deque()
        self._seq: dict[int, int] = {}
        self._seen: dict[int, tuple[deque[int], set[int]]] = {}

    def attach(self, upper: UpperLayer) -> None:
        self.upper = upper

    # Timing defaults --------------------------------------------------------
    def backoff_window(self, tf: TransportFormatId) -> float:
        if self.config.backoff_window_s is not None:
            return self.config.backoff_window_s
        return 2.0 * self.phy.airtime(self.data_bits, tf)

    def ack_timeout(self, tf: TransportFormatId) -> float:
        if self.config.ack_timeout_s is not None:
            return self.config.ack_timeout_s
        ack = self.phy.airtime(self.phy.ack_bits, tf)
        return ack + 2.0 * self.max_delay_s + max(self.config.ack_timeout_guard_s, self.config.ack_guard_s)

    def next_seq(self, dest: int) -> int:
        seq = self._seq.get(dest, 0)
        self._seq[dest] = seq + 1
        return seq

    # Sending ----------------------------------------------------------------
    @property
    def busy(self) -> bool:
        return self._current is not None or bool(self._queue)

    def send(self, pdu: MacPdu, tf: TransportFormatId) -> None:
        """Queue a pdu for CSMA access; the oldest entry goes when full."""
        if len(self._queue) >= self.config.queue_limit:
            dropped, _ = self._queue.popleft()
            self.metrics.queue_drops += 1
            debug_log(f"mac {self.node_id} queue full, dropped {dropped.kind.value} seq={dropped.seq}")
        self._queue.append((pdu, tf))
        self._service()

    def _service(self) -> None:
        if self._current is not None or not self._queue:
            return
        pdu, tf = self._queue.popleft()
        self._current = Transaction(pdu=pdu, tf=tf)
        self._attempt()

    def _attempt(self) -> None:
        txn = self._current
        if txn is None or txn.state not in (TxState.READY, TxState.BACKOFF):
            return
        txn.timer = None
        if self.radio.transmitting:
            # Resumed from on_tx_end.
            txn.state = TxState.READY
            return
        if self.radio.carrier_busy():
            txn.state = TxState.BACKOFF
            txn.timer = self._after(self._uniform_open(self.backoff_window(txn.tf)), self._attempt)
            return
        txn.state = TxState.IN_FLIGHT
        txn.attempts += 1
        self._on_air = txn.pdu
        self.radio.start_tx(txn.pdu, txn.tf)

    def on_tx_end(self) -> None:
        finished, self._on_air = self._on_air, None
        txn = self._current
        if txn is not None and txn.state is TxState.IN_FLIGHT and finished is txn.pdu:
            if txn.pdu.kind is PduKind.DATA_UC:
                txn.state = TxState.AWAIT_ACK
                txn.timer = self._after(self.ack_timeout(txn.tf), self._on_ack_timeout)
            else:
                self._current = None
        if self._pending_acks:
            self._transmit_ack(*self._pending_acks.popleft())
            return
        if self._current is None:
            self._service()
        elif self._current.state is TxState.READY:
            self._attempt()

    # ARQ --------------------------------------------------------------------
    def _on_ack_timeout(self) -> None:
        txn = self._current
        if txn is None or txn.state is not TxState.AWAIT_ACK:
            return
        txn.timer = None
        if txn.attempts <= self.config.max_retx:
            txn.state = TxState.READY
            self._attempt()
            return
        self._complete(LinkOutcome.LINK_FAILURE)

    def _complete(self, outcome: LinkOutcome) -> None:
        txn = self._current
        assert txn is not None
        self._cancel(txn.timer)
        self._current = None
        debug_log(f"mac {self.node_id} arq seq={txn.pdu.seq} -> {txn.pdu.dest}: {outcome.value} after {txn.attempts}")
        if self.upper is not None:
            self.upper.on_link_result(txn.pdu, txn.tf, outcome)
        if not self.radio.transmitting:
            self._service()

    # Receiving --------------------------------------------------------------
    def on_mac_receive(self, pdu: MacPdu, tf: TransportFormatId, sinr_db: float) -> bool:
        """Returns True when the pdu was handed to the router."""
        kind = pdu.kind
        if kind is PduKind.MAC_ACK:
            if pdu.dest == self.node_id:
                self._on_ack(pdu)
            return False
        if kind is PduKind.DATA_BC:
            return self._deliver(pdu, tf, sinr_db)
        if pdu.dest != self.node_id:
            return False
        if kind is PduKind.STATUS_UC:
            return self._deliver(pdu, tf, sinr_db)
        ack = MacPdu(PduKind.MAC_ACK, src=self.node_id, dest=pdu.src, seq=pdu.seq, bits=self.phy.ack_bits)
        self._after(self.config.ack_guard_s, lambda: self._send_ack(ack, tf), EventKind.TX_START)
        if self._is_duplicate(pdu.src, pdu.seq):
            self.metrics.mac_duplicates += 1
            return False
        return self._deliver(pdu, tf, sinr_db)

    def _deliver(self, pdu: MacPdu, tf: TransportFormatId, sinr_db: float) -> bool:
        if self.upper is None:
            return False
        self.upper.on_receive(pdu, tf, sinr_db)
        return True

    def _is_duplicate(self, src: int, seq: int) -> bool:
        order, members = self._seen.setdefault(src, (deque(), set()))
        if seq in members:
            return True
        order.append(seq)
        members.add(seq)
        if len(order) > DEDUP_WINDOW:
            members.discard(order.popleft())
        return False

    def _on_ack(self, ack: MacPdu) -> None:
        txn = self._current
        if (
            txn is None
            or txn.state is not TxState.AWAIT_ACK
            or txn.pdu.dest != ack.src
            or txn.pdu.seq != ack.seq
        ):
            self.metrics.stray_acks += 1
            return
        self._complete(LinkOutcome.DELIVERED)

    def _send_ack(self, ack: MacPdu, tf: TransportFormatId) -> None:
        if self.radio.transmitting:
            self._pending_acks.append((ack, tf))
            return
        self._transmit_ack(ack, tf)

    def _transmit_ack(self, ack: MacPdu, tf: TransportFormatId) -> None:
        # A READY data transaction resumes from on_tx_end.
        self._on_air = ack
        self.radio.start_tx(ack, tf)
