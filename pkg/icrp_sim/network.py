"""
Wiring of one run: the shared acoustic medium, per-node modem/MAC/router
stacks, traffic sources and the event loop.
"""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from .channel import ActiveTransmission, Arrival, LossReason, propagation_delay, received_level
from .debug import debug_log
from .events import EventKind, EventQueue, quantize
from .metrics import MetricsCollector, RunMetrics
from .phy import ModemState, TransportFormatId
from .protocols.icrp import IcrpRouter, IcrpSink, RoutingHeader
from .protocols.mac import BROADCAST, CsmaAlohaMac, MacPdu, PduKind
from .scenario import NodeConfig, Role, Scenario, validate_scenario
from .traffic import TrafficSchedule

# (tx node, rx node, pdu, time) -> True to drop the copy at rx.
LossScript = Callable[[int, int, MacPdu, float], bool]


class AcousticMedium:
    """Pairwise delays and cached link levels; fans transmissions out as arrivals."""

    def __init__(self, scenario: Scenario, queue: EventQueue):
        self.queue = queue
        self.params = scenario.channel
        self.source_level_db = scenario.source_level_db
        self.cs_level_db = scenario.channel.noise_db + scenario.phy.cs_margin_db
        self.ids = [n.id for n in scenario.nodes]
        self.index = {node_id: i for i, node_id in enumerate(self.ids)}
        self.positions = np.array([n.position for n in scenario.nodes], dtype=float)
        self.gains = np.array([n.directivity_gain_db for n in scenario.nodes], dtype=float)
        self.distance = np.linalg.norm(self.positions[:, None, :] - self.positions[None, :, :], axis=-1)
        # Nodes are static, so a link level never changes once computed.
        self._levels: dict[tuple[int, int], float] = {}
        self.nodes: dict[int, "Node"] = {}
        self._arrival_seq = 0

    def register(self, node: "Node") -> None:
        self.nodes[node.config.id] = node

    def link_level(self, tx: ActiveTransmission, j: int) -> float:
        key = (self.index[tx.tx_node], j)
        level = self._levels.get(key)
        if level is None:
            level = float(received_level(tx, self.positions[j], float(self.gains[j]), self.params))
            self._levels[key] = level
        return level

    def transmit(self, tx_id: int, pdu: MacPdu, tf: TransportFormatId, airtime: float) -> ActiveTransmission:
        now = self.queue.now
        i = self.index[tx_id]
        tx = ActiveTransmission(
            tx_node=tx_id,
            tx_position=tuple(self.positions[i]),
            source_level_db=self.source_level_db,
            start=now,
            duration=airtime,
            frame=pdu,
            tf=int(tf),
            tx_gain_db=float(self.gains[i]),
        )
        for j, rx_id in enumerate(self.ids):
            if j == i:
                continue
            start = quantize(now + propagation_delay(float(self.distance[i, j]), self.params))
            level = self.link_level(tx, j)
            arrival = Arrival(
                arrival_id=self._arrival_seq,
                transmission=tx,
                level_db=level,
                start=start,
                end=quantize(start + airtime),
                detectable=level >= self.cs_level_db,
            )
            self._arrival_seq += 1
            rx = self.nodes[rx_id]
            self.queue.schedule(arrival.start, rx_id, EventKind.ARRIVAL_START,
                                lambda rx=rx, a=arrival: rx.on_arrival_start(a))
            self.queue.schedule(arrival.end, rx_id, EventKind.ARRIVAL_END,
                                lambda rx=rx, a=arrival: rx.on_arrival_end(a))
        return tx


class Node:
    """Modem + MAC + router of one network node; acts as the MAC's radio."""

    def __init__(
        self,
        config: NodeConfig,
        scenario: Scenario,
        medium: AcousticMedium,
        queue: EventQueue,
        metrics: MetricsCollector,
        rng: np.random.Generator,
        loss_script: Optional[LossScript] = None,
    ):
        self.config = config
        self.scenario = scenario
        self.medium = medium
        self.queue = queue
        self.metrics = metrics
        self.loss_script = loss_script
        self.modem = ModemState(config.id, scenario.channel, scenario.phy.cs_margin_db)
        self.mac = CsmaAlohaMac(
            node_id=config.id,
            queue=queue,
            metrics=metrics,
            config=scenario.mac,
            phy=scenario.phy,
            radio=self,
            rng=rng,
            data_bits=scenario.traffic.payload_bits,
            max_link_range_m=scenario.calibration_range_m,
            sound_speed_mps=scenario.channel.sound_speed_mps,
        )
        router_cls = IcrpSink if config.role is Role.SINK else IcrpRouter
        self.router: IcrpRouter = router_cls(
            node_id=config.id,
            queue=queue,
            metrics=metrics,
            config=scenario.icrp,
            phy=scenario.phy,
            initial_tf=config.initial_tf,
            bc_forwarding=config.bc_forwarding_enabled and config.role is not Role.SINK,
            data_bits=scenario.traffic.payload_bits,
            max_link_range_m=scenario.calibration_range_m,
            sound_speed_mps=scenario.channel.sound_speed_mps,
            rng=rng,
        )
        self.mac.attach(self.router)
        self.router.attach(self.mac)
        medium.register(self)

    # Radio interface --------------------------------------------------------
    @property
    def transmitting(self) -> bool:
        return self.modem.transmitting

    def carrier_busy(self) -> bool:
        return self.modem.carrier_busy(self.queue.now)

    def start_tx(self, pdu: MacPdu, tf: TransportFormatId) -> float:
        now = self.queue.now
        airtime = self.scenario.phy.airtime(pdu.bits, tf)
        end = quantize(now + airtime)
        self.modem.tx_begin(now, end)
        self.medium.transmit(self.config.id, pdu, tf, end - now)
        self._record_tx(pdu, tf)
        self.queue.schedule(end, self.config.id, EventKind.TX_END, self._on_tx_end)
        return end - now

    def _record_tx(self, pdu: MacPdu, tf: TransportFormatId) -> None:
        is_data = pdu.kind in (PduKind.DATA_BC, PduKind.DATA_UC)
        header = pdu.payload if is_data else None
        self.metrics.transmission(
            src=pdu.src,
            dest=pdu.dest,
            kind=pdu.kind.value,
            tf_name=tf.name,
            packet_key=header.key if isinstance(header, RoutingHeader) else None,
            hop_count=header.hop_count if isinstance(header, RoutingHeader) else 0,
            is_data=is_data,
            is_broadcast=pdu.kind is PduKind.DATA_BC,
        )

    def _on_tx_end(self) -> None:
        self.modem.tx_end(self.queue.now)
        self.mac.on_tx_end()

    # Reception --------------------------------------------------------------
    def on_arrival_start(self, arrival: Arrival) -> None:
        self.modem.arrival_start(arrival, self.queue.now)

    def on_arrival_end(self, arrival: Arrival) -> None:
        pdu: MacPdu = arrival.frame
        tf = TransportFormatId(arrival.transmission.tf)
        outcome = self.modem.arrival_end(
            arrival, self.queue.now, self.scenario.phy.threshold_db(tf, self.scenario.channel)
        )
        relevant = arrival.detectable and pdu.dest in (BROADCAST, self.config.id)
        if outcome.decoded and self.loss_script is not None and self.loss_script(
            arrival.tx_node, self.config.id, pdu, self.queue.now
        ):
            if relevant:
                self.metrics.loss(LossReason.SCRIPTED.value)
            return
        if not outcome.decoded:
            if relevant:
                self.metrics.loss(outcome.reason.value)
            return
        self.mac.on_mac_receive(pdu, tf, outcome.sinr_db)


class Simulator:
    def __init__(self, scenario: Scenario, *, loss_script: Optional[LossScript] = None, trace: bool = False):
        self.scenario = validate_scenario(scenario)
        self.queue = EventQueue(trace=trace)
        sources = scenario.sources
        self.metrics = MetricsCollector(sources)
        streams = np.random.SeedSequence(scenario.seed).spawn(1 + len(scenario.nodes))
        self.medium = AcousticMedium(scenario, self.queue)
        self.nodes: dict[int, Node] = {}
        for cfg, stream in zip(scenario.nodes, streams[1:]):
            self.nodes[cfg.id] = Node(
                cfg, scenario, self.medium, self.queue, self.metrics,
                np.random.default_rng(stream), loss_script,
            )
        self.traffic = TrafficSchedule(scenario.traffic, sources, np.random.default_rng(streams[0]))
        self._ran = False

    @property
    def trace(self) -> Optional[list[tuple[float, int, int, str]]]:
        return self.queue.trace

    def _schedule_emission(self, source: int, t: float) -> None:
        if t > self.scenario.duration:
            return
        self.queue.schedule(t, source, EventKind.TIMER, lambda: self._emit(source))

    def _emit(self, source: int) -> None:
        self.nodes[source].router.originate(self.scenario.traffic.payload_bits)
        self._schedule_emission(source, self.traffic.next_emission(source, self.queue.now))

    def run(self) -> RunMetrics:
        if self._ran:
            raise RuntimeError("a Simulator instance runs once")
        self._ran = True
        sc = self.scenario
        for source in self.traffic.sources:
            self._schedule_emission(source, self.traffic.next_emission(source, 0.0, inclusive=True))
        debug_log(
            f"run start nodes={len(sc.nodes)} sources={len(self.traffic.sources)} "
            f"seed={sc.seed} duration={sc.duration} SL={sc.source_level_db:.3f}"
        )
        self.queue.run(sc.duration + sc.drain_s)
        metrics = self.metrics.finalize(sc.duration, self.queue.processed)
        debug_log(
            f"run done seed={sc.seed} events={self.queue.processed} "
            f"generated={metrics.generated} pdr={metrics.pdr_pct}"
        )
        return metrics


def run(scenario: Scenario, *, loss_script: Optional[LossScript] = None) -> RunMetrics:
    """Validate and simulate one scenario."""
    return Simulator(scenario, loss_script=loss_script).run()
