"""
Enhanced ICRP: data floods as broadcast until the sink's STATUS reply hands
the source a unicast route; unicast falls back to broadcast once patience
runs out. Enhancements over plain ICRP: hop limit, UC patience, SINR in the
best-path metric, per-link transport-format adaptation.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, replace
from enum import Enum
from typing import Any, Optional, Protocol, Sequence

import numpy as np

from ..debug import debug_log
from ..errors import ContractViolation
from ..events import EventQueue
from ..metrics import MetricsCollector
from ..phy import PhyConfig, TransportFormatId
from .base import BaseLayer
from .mac import BROADCAST, LinkOutcome, MacPdu, PduKind

PacketKey = tuple[int, int]
PathHop = tuple[int, float]


class Mode(Enum):
    BC = "BC"
    UC = "UC"


@dataclass(frozen=True)
class RoutingHeader:
    origin: int
    origin_seq: int
    mode: Mode
    path: tuple[PathHop, ...]
    payload_bits: int = 420
    created: float = 0.0
    uc_route: tuple[int, ...] = ()
    uc_next_index: int = 0

    @property
    def key(self) -> PacketKey:
        return (self.origin, self.origin_seq)

    @property
    def hop_count(self) -> int:
        return len(self.path) - 1

    @property
    def nodes(self) -> tuple[int, ...]:
        return tuple(node for node, _ in self.path)

    def extended(self, node: int, sinr_db: float) -> "RoutingHeader":
        return replace(self, path=self.path + ((node, sinr_db),))


@dataclass(frozen=True)
class StatusHeader:
    origin: int
    origin_seq: int
    route: tuple[int, ...]
    link_sinr_db: tuple[float, ...]


@dataclass
class RouteEntry:
    path_to_sink: tuple[int, ...]
    min_sinr_db: float
    established: float
    consecutive_failures: int = 0

    @property
    def next_hop(self) -> int:
        return self.path_to_sink[1]


class DupCache:
    """Bounded FIFO set of (origin, seq) pairs."""

    def __init__(self, capacity: int = 256):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._entries: OrderedDict[PacketKey, None] = OrderedDict()

    def __contains__(self, key: PacketKey) -> bool:
        return key in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def add(self, key: PacketKey) -> bool:
        """Insert key; False when it was already present."""
        if key in self._entries:
            return False
        self._entries[key] = None
        while len(self._entries) > self.capacity:
            self._entries.popitem(last=False)
        return True


@dataclass(frozen=True)
class IcrpConfig:
    hop_limit: int = 4
    patience: int = 2
    # None: long enough for every copy of a flood to settle at the sink.
    status_window_s: Optional[float] = None
    route_lifetime_s: Optional[float] = None
    rate_up_successes: int = 3
    rate_down_failures: int = 2
    rate_adaptation: bool = True
    max_tf: TransportFormatId = TransportFormatId.TF3
    dup_cache_size: int = 256
    bc_jitter_frames: float = 2.0

    def __post_init__(self) -> None:
        if self.hop_limit < 1:
            raise ValueError("hop_limit must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.status_window_s is not None and self.status_window_s < 0:
            raise ValueError("status_window_s must be >= 0")
        if self.route_lifetime_s is not None and not self.route_lifetime_s > 0:
            raise ValueError("route_lifetime_s must be > 0")
        if self.rate_up_successes < 1 or self.rate_down_failures < 1:
            raise ValueError("rate adaptation counters must be >= 1")
        if self.dup_cache_size < 1:
            raise ValueError("dup_cache_size must be >= 1")
        if self.bc_jitter_frames < 0:
            raise ValueError("bc_jitter_frames must be >= 0")


@dataclass
class _LinkRate:
    tf: TransportFormatId
    successes: int = 0
    failures: int = 0


class LinkRateState:
    """Per-neighbour transport format driven by UC ARQ outcomes."""

    def __init__(self, initial_tf: TransportFormatId, config: IcrpConfig):
        self.config = config
        self.initial_tf = min(initial_tf, config.max_tf)
        self._links: dict[int, _LinkRate] = {}

    def tf_for(self, neighbor: int) -> TransportFormatId:
        link = self._links.get(neighbor)
        return link.tf if link is not None else self.initial_tf

    def rate_adapt(self, neighbor: int, success: bool) -> TransportFormatId:
        cfg = self.config
        link = self._links.setdefault(neighbor, _LinkRate(self.initial_tf))
        if not cfg.rate_adaptation:
            return link.tf
        if success:
            link.successes += 1
            link.failures = 0
            if link.successes >= cfg.rate_up_successes:
                link.tf = link.tf.step(+1, cfg.max_tf)
                link.successes = 0
        else:
            link.failures += 1
            link.successes = 0
            if link.failures >= cfg.rate_down_failures:
                link.tf = link.tf.step(-1, cfg.max_tf)
                link.failures = 0
        return link.tf


@dataclass(frozen=True)
class PathCandidate:
    path: tuple[PathHop, ...]
    arrival_time: float

    @property
    def min_sinr_db(self) -> float:
        return min((s for _, s in self.path[1:]), default=math.inf)

    @property
    def hops(self) -> int:
        return len(self.path) - 1

    def rank(self) -> tuple:
        nodes = tuple(n for n, _ in self.path)
        next_hop = nodes[1] if len(nodes) > 1 else nodes[0]
        return (-self.min_sinr_db, self.hops, self.arrival_time, next_hop, nodes)


def select_best_path(candidates: Sequence[PathCandidate]) -> tuple[PathHop, ...]:
    """Best min-hop SINR, then fewest hops, earliest arrival, lowest next hop."""
    if not candidates:
        raise ContractViolation("select_best_path needs at least one candidate")
    for c in candidates:
        nodes = [n for n, _ in c.path]
        if len(set(nodes)) != len(nodes):
            raise ContractViolation(f"cyclic candidate path {nodes}")
    return min(candidates, key=PathCandidate.rank).path


class MacService(Protocol):
    def send(self, pdu: MacPdu, tf: TransportFormatId) -> None: ...

    def next_seq(self, dest: int) -> int: ...


class IcrpRouter(BaseLayer):
    def __init__(
        self,
        *,
        node_id: int,
        queue: EventQueue,
        metrics: MetricsCollector,
        config: IcrpConfig,
        phy: PhyConfig,
        initial_tf: TransportFormatId = TransportFormatId.TF3,
        bc_forwarding: bool = True,
        data_bits: int = 420,
        max_link_range_m: float = 1200.0,
        sound_speed_mps: float = 1500.0,
        rng: Optional[np.random.Generator] = None,
    ):
        super().__init__(node_id=node_id, queue=queue, metrics=metrics, rng=rng)
        self.max_delay_s = max_link_range_m / sound_speed_mps
        self.config = config
        self.phy = phy
        self.bc_forwarding = bc_forwarding
        self.rates = LinkRateState(initial_tf, config)
        self.bc_tf = self.rates.initial_tf
        self.dup = DupCache(config.dup_cache_size)
        self.route: Optional[RouteEntry] = None
        self.mac: Optional[MacService] = None
        self.data_bits = data_bits
        self._seq = 0
        self._transit_failures: dict[int, int] = {}

    def attach(self, mac: MacService) -> None:
        self.mac = mac

    # Helpers ----------------------------------------------------------------
    def _send(self, kind: PduKind, dest: int, payload: Any, bits: int, tf: TransportFormatId) -> None:
        assert self.mac is not None, "router used before attach()"
        pdu = MacPdu(kind, src=self.node_id, dest=dest, seq=self.mac.next_seq(dest), payload=payload, bits=bits)
        self.mac.send(pdu, tf)

    def _send_uc(self, header: RoutingHeader, neighbor: int) -> None:
        self._send(PduKind.DATA_UC, neighbor, header, header.payload_bits, self.rates.tf_for(neighbor))

    def _send_bc(self, header: RoutingHeader, jitter: bool) -> None:
        if header.hop_count >= self.config.hop_limit:
            self.metrics.hop_limit_drops += 1
            return

        def go() -> None:
            self._send(PduKind.DATA_BC, BROADCAST, header, header.payload_bits, self.bc_tf)

        window = self.bc_jitter_window() if jitter else 0.0
        if window > 0:
            self._after(float(self.rng.uniform(0.0, window)), go)
        else:
            go()

    def bc_jitter_window(self) -> float:
        """Re-broadcast delay spread: jitter frames of airtime plus a round trip at max range."""
        if self.config.bc_jitter_frames <= 0:
            return 0.0
        airtime = self.phy.airtime(self.data_bits, self.bc_tf)
        return self.config.bc_jitter_frames * airtime + 2.0 * self.max_delay_s

    def route_live(self) -> bool:
        entry = self.route
        if entry is None:
            return False
        lifetime = self.config.route_lifetime_s
        if lifetime is not None and self.now - entry.established > lifetime:
            self._invalidate_route("expired")
            return False
        return True

    def _invalidate_route(self, why: str) -> None:
        if self.route is None:
            return
        debug_log(f"icrp {self.node_id} route {self.route.path_to_sink} invalidated ({why})")
        self.route = None
        self.metrics.route_invalidations += 1
        self.metrics.route_live(self.node_id, False, self.now)

    # Origination ------------------------------------------------------------
    def originate(self, payload_bits: int) -> RoutingHeader:
        seq = self._seq
        self._seq += 1
        self.metrics.packet_generated(self.node_id)
        start = ((self.node_id, math.inf),)
        if self.route_live():
            assert self.route is not None
            header = RoutingHeader(
                origin=self.node_id, origin_seq=seq, mode=Mode.UC, path=start,
                payload_bits=payload_bits, created=self.now,
                uc_route=self.route.path_to_sink, uc_next_index=1,
            )
            self.metrics.route_used(self.node_id, header.uc_route)
            self._send_uc(header, self.route.next_hop)
            return header
        header = RoutingHeader(
            origin=self.node_id, origin_seq=seq, mode=Mode.BC, path=start,
            payload_bits=payload_bits, created=self.now,
        )
        self.dup.add(header.key)
        self._send_bc(header, jitter=False)
        return header

    # Receive dispatch -------------------------------------------------------
    def on_receive(self, pdu: MacPdu, tf: TransportFormatId, sinr_db: float) -> None:
        if pdu.kind is PduKind.DATA_BC:
            self.on_receive_bc(pdu.payload, sinr_db)
        elif pdu.kind is PduKind.DATA_UC:
            self.on_receive_uc(pdu.payload, sinr_db)
        elif pdu.kind is PduKind.STATUS_UC:
            self.on_receive_status(pdu.payload)

    def on_receive_bc(self, header: RoutingHeader, sinr_db: float) -> None:
        if not self.dup.add(header.key):
            return
        if not self.bc_forwarding or self.node_id in header.nodes:
            return
        if header.hop_count + 1 >= self.config.hop_limit:
            self.metrics.hop_limit_drops += 1
            return
        self._send_bc(header.extended(self.node_id, sinr_db), jitter=True)

    def on_receive_uc(self, header: RoutingHeader, sinr_db: float) -> None:
        idx = header.uc_next_index
        if idx >= len(header.uc_route) or header.uc_route[idx] != self.node_id:
            self.metrics.anomalies += 1
            return
        if idx + 1 >= len(header.uc_route):
            # Route ends here but we are not the sink.
            self.metrics.anomalies += 1
            return
        forwarded = replace(header.extended(self.node_id, sinr_db), uc_next_index=idx + 1)
        self._send_uc(forwarded, header.uc_route[idx + 1])

    def on_receive_status(self, status: StatusHeader) -> None:
        if self.node_id not in status.route:
            self.metrics.anomalies += 1
            return
        i = status.route.index(self.node_id)
        suffix = status.route[i:]
        self.route = RouteEntry(
            path_to_sink=suffix,
            min_sinr_db=min(status.link_sinr_db[i:], default=math.inf),
            established=self.now,
        )
        self._transit_failures.pop(self.route.next_hop, None)
        self.metrics.route_live(self.node_id, True, self.now)
        debug_log(f"icrp {self.node_id} route installed {suffix}")
        if i > 0:
            prev = status.route[i - 1]
            self._send(PduKind.STATUS_UC, prev, status,
                       self.phy.status_bits(len(status.route) - 1), self.rates.tf_for(prev))

    # Unicast outcomes -------------------------------------------------------
    def on_link_result(self, pdu: MacPdu, tf: TransportFormatId, outcome: LinkOutcome) -> None:
        if pdu.kind is not PduKind.DATA_UC:
            return
        neighbor = pdu.dest
        success = outcome is LinkOutcome.DELIVERED
        self.rates.rate_adapt(neighbor, success)
        if success:
            self._set_failures(neighbor, 0)
        else:
            self.on_uc_link_failure(pdu.payload, neighbor)

    def _failures(self, neighbor: int) -> int:
        if self.route is not None and self.route.next_hop == neighbor:
            return self.route.consecutive_failures
        return self._transit_failures.get(neighbor, 0)

    def _set_failures(self, neighbor: int, count: int) -> None:
        if self.route is not None and self.route.next_hop == neighbor:
            self.route.consecutive_failures = count
        elif count:
            self._transit_failures[neighbor] = count
        else:
            self._transit_failures.pop(neighbor, None)

    def on_uc_link_failure(self, header: RoutingHeader, failed_neighbor: int) -> None:
        count = self._failures(failed_neighbor) + 1
        if count < self.config.patience:
            self._set_failures(failed_neighbor, count)
            self._send_uc(header, failed_neighbor)
            return
        self._set_failures(failed_neighbor, 0)
        if self.route is not None and self.route.next_hop == failed_neighbor:
            self._invalidate_route("patience exhausted")
        self.metrics.bc_fallbacks += 1
        fallback = replace(header, mode=Mode.BC, uc_route=(), uc_next_index=0)
        self.dup.add(fallback.key)
        self._send_bc(fallback, jitter=False)


class IcrpSink(IcrpRouter):
    """Collects data, answers the first BC copy of each packet with STATUS."""

    def __init__(self, **kwargs: Any):
        kwargs.setdefault("bc_forwarding", False)
        super().__init__(**kwargs)
        self._delivered: set[PacketKey] = set()
        self._windows: dict[PacketKey, list[PathCandidate]] = {}

    def originate(self, payload_bits: int) -> RoutingHeader:
        raise ContractViolation("the sink does not originate traffic")

    def _deliver(self, header: RoutingHeader) -> bool:
        if header.key in self._delivered:
            self.metrics.duplicate_at_sink()
            return False
        self._delivered.add(header.key)
        self.metrics.packet_delivered(header.origin, self.now - header.created, header.hop_count)
        return True

    def on_receive_bc(self, header: RoutingHeader, sinr_db: float) -> None:
        arrived = header.extended(self.node_id, sinr_db)
        candidate = PathCandidate(arrived.path, self.now)
        window = self._windows.get(header.key)
        if window is not None:
            window.append(candidate)
            self.metrics.duplicate_at_sink()
            return
        if not self._deliver(arrived):
            return
        self._windows[header.key] = [candidate]
        self._after(self.status_window(), lambda: self._close_window(header.key))

    def status_window(self) -> float:
        if self.config.status_window_s is not None:
            return self.config.status_window_s
        # Each further relay adds its jitter, one frame and one max-range hop.
        per_hop = self.bc_jitter_window() + self.phy.airtime(self.data_bits, self.bc_tf) + self.max_delay_s
        return max(1, self.config.hop_limit - 1) * per_hop

    def on_receive_uc(self, header: RoutingHeader, sinr_db: float) -> None:
        idx = header.uc_next_index
        if idx != len(header.uc_route) - 1 or header.uc_route[idx] != self.node_id:
            self.metrics.anomalies += 1
            return
        self._deliver(header.extended(self.node_id, sinr_db))

    def on_receive_status(self, status: StatusHeader) -> None:
        self.metrics.anomalies += 1

    def _close_window(self, key: PacketKey) -> None:
        candidates = self._windows.pop(key)
        best = select_best_path(candidates)
        route = tuple(n for n, _ in best)
        status = StatusHeader(
            origin=key[0], origin_seq=key[1], route=route,
            link_sinr_db=tuple(s for _, s in best[1:]),
        )
        self.metrics.status_sent()
        prev = route[-2]
        self._send(PduKind.STATUS_UC, prev, status,
                   self.phy.status_bits(len(route) - 1), self.rates.tf_for(prev))
