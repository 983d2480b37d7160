"""Run statistics: PDR, STATUS share, transport-format usage, loss reasons."""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Optional

from .errors import UndefinedMetricError


@dataclass(frozen=True)
class RunMetrics:
    """Immutable summary of one run. Mapping fields are read-only by convention."""

    generated: int = 0
    delivered_unique: int = 0
    pdr_pct: Optional[float] = None
    status_count: int = 0
    status_pct: Optional[float] = None
    per_source_generated: Mapping[int, int] = field(default_factory=dict)
    per_source_delivered: Mapping[int, int] = field(default_factory=dict)
    per_source_pdr: Mapping[int, Optional[float]] = field(default_factory=dict)
    uc_time_fraction: Mapping[int, float] = field(default_factory=dict)
    dominant_routes: Mapping[int, tuple[int, ...]] = field(default_factory=dict)
    link_transmissions: Mapping[tuple[int, int], int] = field(default_factory=dict)
    transmissions_by_kind: Mapping[str, int] = field(default_factory=dict)
    tf_usage: Mapping[str, int] = field(default_factory=dict)
    data_transmissions: int = 0
    loss_reasons: Mapping[str, int] = field(default_factory=dict)
    mean_latency_s: Optional[float] = None
    sink_duplicates: int = 0
    mac_duplicates: int = 0
    stray_acks: int = 0
    queue_drops: int = 0
    bc_fallbacks: int = 0
    route_invalidations: int = 0
    hop_limit_drops: int = 0
    anomalies: int = 0
    max_bc_transmissions_per_packet: int = 0
    max_tx_hop_count: int = 0
    max_delivered_hops: int = 0
    events_processed: int = 0


def _ratio(numerator: int, generated: int) -> float:
    if generated <= 0:
        raise UndefinedMetricError("no packets generated")
    return 100.0 * numerator / generated


def compute_pdr(metrics: RunMetrics) -> float:
    return _ratio(metrics.delivered_unique, metrics.generated)


def compute_status_pct(metrics: RunMetrics) -> float:
    """STATUS messages per generated data packet, in percent."""
    return _ratio(metrics.status_count, metrics.generated)


class MetricsCollector:
    """Mutable counters fed by the protocol layers during a run."""

    def __init__(self, sources: Iterable[int] = ()):
        self.generated: Counter[int] = Counter({s: 0 for s in sources})
        self.delivered: Counter[int] = Counter()
        self.latency_sum = 0.0
        self.status_count = 0
        self.link_tx: Counter[tuple[int, int]] = Counter()
        self.kind_tx: Counter[str] = Counter()
        self.tf_usage: Counter[str] = Counter()
        self.data_tx = 0
        self.bc_copies: Counter[tuple[int, int]] = Counter()
        self.loss_reasons: Counter[str] = Counter()
        self.routes_used: dict[int, Counter[tuple[int, ...]]] = defaultdict(Counter)
        self.sink_duplicates = 0
        self.mac_duplicates = 0
        self.stray_acks = 0
        self.queue_drops = 0
        self.bc_fallbacks = 0
        self.route_invalidations = 0
        self.hop_limit_drops = 0
        self.anomalies = 0
        self.max_tx_hop_count = 0
        self.max_delivered_hops = 0
        self._route_since: dict[int, float] = {}
        self._route_time: Counter[int] = Counter()

    # Application ------------------------------------------------------------
    def packet_generated(self, origin: int) -> None:
        self.generated[origin] += 1

    def packet_delivered(self, origin: int, latency_s: float, hops: int) -> None:
        self.delivered[origin] += 1
        self.latency_sum += latency_s
        self.max_delivered_hops = max(self.max_delivered_hops, hops)

    def duplicate_at_sink(self) -> None:
        self.sink_duplicates += 1

    def status_sent(self) -> None:
        self.status_count += 1

    # Link layer -------------------------------------------------------------
    def transmission(self, src: int, dest: int, kind: str, tf_name: str,
                     packet_key: Optional[tuple[int, int]] = None, hop_count: int = 0,
                     is_data: bool = False, is_broadcast: bool = False) -> None:
        self.link_tx[(src, dest)] += 1
        self.kind_tx[kind] += 1
        if is_data:
            self.data_tx += 1
            self.tf_usage[tf_name] += 1
            self.max_tx_hop_count = max(self.max_tx_hop_count, hop_count)
            if is_broadcast and packet_key is not None:
                self.bc_copies[packet_key] += 1

    def loss(self, reason: str) -> None:
        self.loss_reasons[reason] += 1

    # Routing ----------------------------------------------------------------
    def route_live(self, node: int, live: bool, now: float) -> None:
        if node not in self.generated:
            return
        if live:
            self._route_since.setdefault(node, now)
        elif node in self._route_since:
            self._route_time[node] += now - self._route_since.pop(node)

    def route_used(self, origin: int, route: tuple[int, ...]) -> None:
        self.routes_used[origin][route] += 1

    def finalize(self, duration: float, events_processed: int = 0) -> RunMetrics:
        route_time = Counter(self._route_time)
        for node, since in self._route_since.items():
            if since < duration:
                route_time[node] += duration - since
        generated = sum(self.generated.values())
        delivered = sum(self.delivered.values())
        sources = sorted(self.generated)
        per_pdr = {
            s: (100.0 * self.delivered[s] / self.generated[s] if self.generated[s] else None)
            for s in sources
        }
        dominant = {}
        for origin in sorted(self.routes_used):
            counts = self.routes_used[origin]
            dominant[origin] = min(counts, key=lambda r: (-counts[r], r))
        summary = RunMetrics(
            generated=generated,
            delivered_unique=delivered,
            status_count=self.status_count,
            per_source_generated={s: self.generated[s] for s in sources},
            per_source_delivered={s: self.delivered[s] for s in sources},
            per_source_pdr=per_pdr,
            uc_time_fraction={s: min(1.0, route_time[s] / duration) for s in sources},
            dominant_routes=dominant,
            link_transmissions=dict(sorted(self.link_tx.items())),
            transmissions_by_kind=dict(sorted(self.kind_tx.items())),
            tf_usage=dict(sorted(self.tf_usage.items())),
            data_transmissions=self.data_tx,
            loss_reasons=dict(sorted(self.loss_reasons.items())),
            mean_latency_s=self.latency_sum / delivered if delivered else None,
            sink_duplicates=self.sink_duplicates,
            mac_duplicates=self.mac_duplicates,
            stray_acks=self.stray_acks,
            queue_drops=self.queue_drops,
            bc_fallbacks=self.bc_fallbacks,
            route_invalidations=self.route_invalidations,
            hop_limit_drops=self.hop_limit_drops,
            anomalies=self.anomalies,
            max_bc_transmissions_per_packet=max(self.bc_copies.values(), default=0),
            max_tx_hop_count=self.max_tx_hop_count,
            max_delivered_hops=self.max_delivered_hops,
            events_processed=events_processed,
        )
        if not generated:
            return summary
        return replace(summary, pdr_pct=compute_pdr(summary), status_pct=compute_status_pct(summary))
