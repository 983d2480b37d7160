"""Scenario description and the sensor-ring topology builder."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

from .channel import ChannelParams, distance
from .errors import ScenarioError
from .phy import PhyConfig, TransportFormatId, calibrate_source_level
from .protocols.icrp import IcrpConfig
from .protocols.mac import MacConfig
from .traffic import TrafficConfig


class Role(Enum):
    SENSOR = "sensor"
    RELAY = "relay"
    SINK = "sink"


@dataclass(frozen=True)
class NodeConfig:
    id: int
    position: tuple[float, float, float]
    role: Role = Role.SENSOR
    directivity_gain_db: float = 0.0
    bc_forwarding_enabled: bool = True
    initial_tf: TransportFormatId = TransportFormatId.TF3


@dataclass(frozen=True)
class Scenario:
    nodes: tuple[NodeConfig, ...]
    channel: ChannelParams = field(default_factory=ChannelParams)
    traffic: TrafficConfig = field(default_factory=TrafficConfig)
    duration: float = 7200.0
    seed: int = 1
    phy: PhyConfig = field(default_factory=PhyConfig)
    mac: MacConfig = field(default_factory=MacConfig)
    icrp: IcrpConfig = field(default_factory=IcrpConfig)
    drain_s: float = 60.0

    @property
    def sink(self) -> NodeConfig:
        return next(n for n in self.nodes if n.role is Role.SINK)

    def node(self, node_id: int) -> NodeConfig:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    @property
    def sources(self) -> tuple[int, ...]:
        if self.traffic.sources is not None:
            return tuple(sorted(self.traffic.sources))
        return tuple(sorted(n.id for n in self.nodes if n.role is Role.SENSOR))

    @property
    def calibration_range_m(self) -> float:
        """Range at which an interference-free link sits exactly on threshold."""
        if self.phy.calibration_range_m is not None:
            return self.phy.calibration_range_m
        sink = self.sink
        far = [distance(n.position, sink.position) for n in self.nodes if n.role is Role.SENSOR]
        if not far:
            far = [distance(n.position, sink.position) for n in self.nodes if n.role is not Role.SINK]
        return max(max(far, default=1.0), 1.0)

    @property
    def source_level_db(self) -> float:
        if self.phy.source_level_db is not None:
            return self.phy.source_level_db
        return calibrate_source_level(self.calibration_range_m, self.channel)


def validate_scenario(scenario: Scenario) -> Scenario:
    nodes = scenario.nodes
    if not nodes:
        raise ScenarioError("scenario has no nodes")
    ids = [n.id for n in nodes]
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise ScenarioError(f"duplicate node ids: {dupes}")
    sinks = [n.id for n in nodes if n.role is Role.SINK]
    if len(sinks) != 1:
        raise ScenarioError(f"exactly one sink required, found {len(sinks)}")
    for n in nodes:
        if len(n.position) != 3 or not all(math.isfinite(c) for c in n.position):
            raise ScenarioError(f"node {n.id}: position must be three finite numbers")
        if not math.isfinite(n.directivity_gain_db):
            raise ScenarioError(f"node {n.id}: directivity_gain_db must be finite")
    if not scenario.duration > 0:
        raise ScenarioError("duration must be > 0")
    if scenario.drain_s < 0:
        raise ScenarioError("drain_s must be >= 0")
    if not 0 <= scenario.seed < 2**64:
        raise ScenarioError("seed must be a 64-bit unsigned integer")
    known = set(ids)
    for src in scenario.sources:
        if src not in known:
            raise ScenarioError(f"traffic source {src} is not a node")
        if src == sinks[0]:
            raise ScenarioError("the sink cannot be a traffic source")
    for node_id in (*scenario.traffic.alarm_schedule, *scenario.traffic.hourly_alarm):
        if node_id not in known:
            raise ScenarioError(f"alarm schedule names unknown node {node_id}")
    if not scenario.calibration_range_m > 0:
        raise ScenarioError("calibration range must be > 0")
    return scenario


def build_ring_scenario(
    node_distance: float,
    n_sensors: int = 8,
    n_relays: int = 4,
    *,
    initial_tf: TransportFormatId = TransportFormatId.TF3,
    choke_sensors: bool = False,
    depth_m: float = 0.0,
    seed: int = 1,
    duration: float = 7200.0,
) -> Scenario:
    """Sink at the origin, relays on radius d, sensors on radius 2d.

    Relays sit at k·360/n_relays degrees and sensors at k·360/n_sensors, both
    starting at 0°, so with 4 relays and 8 sensors every other sensor shares
    a spoke with a relay.
    """
    if not node_distance > 0:
        raise ScenarioError("node_distance must be > 0")
    if n_sensors < 0 or n_relays < 0:
        raise ScenarioError("node counts must be >= 0")

    def ring(radius: float, count: int, start_id: int, role: Role) -> list[NodeConfig]:
        out = []
        for k in range(count):
            angle = 2.0 * math.pi * k / count
            out.append(NodeConfig(
                id=start_id + k,
                position=(radius * math.cos(angle), radius * math.sin(angle), depth_m),
                role=role,
                bc_forwarding_enabled=not (choke_sensors and role is Role.SENSOR),
                initial_tf=initial_tf,
            ))
        return out

    nodes = [NodeConfig(id=0, position=(0.0, 0.0, depth_m), role=Role.SINK, initial_tf=initial_tf)]
    nodes += ring(node_distance, n_relays, 1, Role.RELAY)
    nodes += ring(2.0 * node_distance, n_sensors, 1 + n_relays, Role.SENSOR)
    return Scenario(
        nodes=tuple(nodes),
        duration=duration,
        seed=seed,
        phy=PhyConfig(calibration_range_m=2.0 * node_distance),
    )


def with_cell(
    scenario: Scenario,
    *,
    interval_s: Optional[float] = None,
    tf: Optional[TransportFormatId] = None,
    seed: Optional[int] = None,
    duration: Optional[float] = None,
) -> Scenario:
    """Copy of a scenario with one sweep cell's parameters applied."""
    out = scenario
    if interval_s is not None:
        out = replace(out, traffic=replace(out.traffic, constant_interval_override_s=interval_s))
    if tf is not None:
        out = replace(
            out,
            nodes=tuple(replace(n, initial_tf=tf) for n in out.nodes),
            icrp=replace(out.icrp, max_tf=tf),
        )
    if seed is not None:
        out = replace(out, seed=seed)
    if duration is not None:
        out = replace(out, duration=duration)
    return out
