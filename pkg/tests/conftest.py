from __future__ import annotations

from pathlib import Path

import pytest

from icrp_sim.events import EventKind, EventQueue
from icrp_sim.metrics import MetricsCollector
from icrp_sim.phy import PhyConfig, TransportFormatId
from icrp_sim.protocols.icrp import IcrpConfig
from icrp_sim.scenario import NodeConfig, Role, Scenario
from icrp_sim.traffic import TrafficConfig

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


@pytest.fixture
def scenarios_dir() -> Path:
    return SCENARIOS


@pytest.fixture
def queue() -> EventQueue:
    return EventQueue()


@pytest.fixture
def metrics() -> MetricsCollector:
    return MetricsCollector(sources=(1, 2, 5))


class FakeRadio:
    """Half-duplex radio stub with a fixed airtime; reports tx end to the MAC."""

    def __init__(self, queue: EventQueue, airtime: float = 1.0):
        self.queue = queue
        self.airtime = airtime
        self.busy = False
        self.sent: list = []
        self.mac = None
        self._tx = False

    @property
    def transmitting(self) -> bool:
        return self._tx

    def carrier_busy(self) -> bool:
        return self.busy or self._tx

    def start_tx(self, pdu, tf) -> float:
        self.sent.append((self.queue.now, pdu, tf))
        self._tx = True
        self.queue.schedule_in(self.airtime, 0, EventKind.TX_END, self._end)
        return self.airtime

    def _end(self) -> None:
        self._tx = False
        self.mac.on_tx_end()


class RecordingUpper:
    def __init__(self):
        self.received: list = []
        self.results: list = []

    def on_receive(self, pdu, tf, sinr_db) -> None:
        self.received.append(pdu)

    def on_link_result(self, pdu, tf, outcome) -> None:
        self.results.append((pdu, outcome))


class RecordingMac:
    """Stands in for the MAC below a router: records what it is asked to send."""

    def __init__(self):
        self.sent: list = []
        self._seq: dict[int, int] = {}

    def send(self, pdu, tf) -> None:
        self.sent.append((pdu, tf))

    def next_seq(self, dest: int) -> int:
        seq = self._seq.get(dest, 0)
        self._seq[dest] = seq + 1
        return seq


def single_link(
    *,
    interval_s: float = 120.0,
    duration: float = 1200.0,
    patience: int = 2,
    phase_offsets: bool = False,
    seed: int = 1,
) -> Scenario:
    return Scenario(
        nodes=(
            NodeConfig(0, (0.0, 0.0, 0.0), Role.SINK),
            NodeConfig(1, (600.0, 0.0, 0.0), Role.SENSOR),
        ),
        traffic=TrafficConfig(constant_interval_override_s=interval_s, phase_offsets=phase_offsets),
        duration=duration,
        seed=seed,
        phy=PhyConfig(calibration_range_m=1200.0),
        icrp=IcrpConfig(patience=patience),
    )


TF1, TF2, TF3 = TransportFormatId.TF1, TransportFormatId.TF2, TransportFormatId.TF3
