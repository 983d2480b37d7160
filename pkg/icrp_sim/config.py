"""
Scenario files (YAML) and process-level settings.

A scenario file is a mapping with these sections (all optional except one
of `ring` / `nodes`):

  seed: 1
  duration_s: 7200
  drain_s: 60
  ring:    {node_distance_m: 600, sensors: 8, relays: 4, depth_m: 0,
            initial_tf: TF3, choke_sensors: false}
  nodes:   [{id, role: sink|relay|sensor, x, y, z, gain_db, bc_forwarding, initial_tf}, ...]
  channel: {frequency_khz, spreading_k, sound_speed_mps, noise_db, threshold_db}
  phy:     {ack_bits, status_base_bits, status_hop_bits, sync_overhead_s, max_frame_s,
            source_level_db, calibration_range_m, cs_margin_db, thresholds_db: {TF1: ..}}
  mac:     {backoff_window_s, ack_timeout_s, max_retx, ack_guard_s, ack_timeout_guard_s, queue_limit}
  icrp:    {hop_limit, patience, status_window_s, route_lifetime_s, rate_up_successes,
            rate_down_failures, rate_adaptation, max_tf, dup_cache_size, bc_jitter_frames}
  traffic: {measurement_period_s, normal_decimation, alarm_decimation, payload_bits,
            interval_s, phase_offsets, sources,
            alarm: {hourly: {nodes, window_s}, permanent: [ids] | all,
                    windows: {id: [[start_s, duration_s], ...]}}}

Hourly alarms repeat for as long as the run lasts; permanent alarms never end.

Env:
  ICRP_SIM_WORKERS  (default parallel sweep workers; default 1)
"""

from __future__ import annotations

import math
import os
from dataclasses import replace
from pathlib import Path
from typing import Any, Callable, Optional, Union

import yaml

from .channel import ChannelParams
from .errors import ScenarioError
from .phy import PhyConfig, TransportFormatId
from .protocols.icrp import IcrpConfig
from .protocols.mac import MacConfig
from .scenario import NodeConfig, Role, Scenario, build_ring_scenario, validate_scenario
from .traffic import TrafficConfig, permanent_alarm

Path_ = tuple[Union[str, int], ...]
_MISSING = object()


def default_workers() -> int:
    try:
        return max(1, int(os.getenv("ICRP_SIM_WORKERS", "1")))
    except ValueError:
        return 1


def _collect_lines(node: yaml.Node, path: Path_, lines: dict[Path_, int]) -> None:
    lines.setdefault(path, node.start_mark.line + 1)
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            key = key_node.value if isinstance(key_node, yaml.ScalarNode) else str(key_node.start_mark)
            child = path + (key,)
            lines[child] = key_node.start_mark.line + 1
            _collect_lines(value_node, child, lines)
    elif isinstance(node, yaml.SequenceNode):
        for i, item in enumerate(node.value):
            _collect_lines(item, path + (i,), lines)


class _Reader:
    """Typed access to parsed YAML that reports the offending line."""

    def __init__(self, lines: dict[Path_, int], source: Optional[str]):
        self.lines = lines
        self.source = source

    def line(self, path: Path_) -> Optional[int]:
        while path:
            if path in self.lines:
                return self.lines[path]
            path = path[:-1]
        return self.lines.get(())

    def fail(self, path: Path_, message: str) -> ScenarioError:
        label = ".".join(str(p) for p in path)
        text = f"{label}: {message}" if label else message
        return ScenarioError(text, line=self.line(path), source=self.source)

    def mapping(self, value: Any, path: Path_) -> dict:
        if value is None:
            return {}
        if not isinstance(value, dict):
            raise self.fail(path, "expected a mapping")
        return value

    def section(self, data: dict, path: Path_, allowed: set[str]) -> dict:
        section = self.mapping(data, path)
        for key in section:
            if key not in allowed:
                raise self.fail(path + (key,), f"unknown key (allowed: {', '.join(sorted(allowed))})")
        return section

    def number(self, data: dict, key: str, path: Path_, default: Any = _MISSING, *,
               minimum: Optional[float] = None, maximum: Optional[float] = None,
               positive: bool = False, nullable: bool = False) -> Any:
        if key not in data:
            if default is _MISSING:
                raise self.fail(path + (key,), "required")
            return default
        value = data[key]
        if value is None and nullable:
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise self.fail(path + (key,), f"expected a finite number, got {value!r}")
        if positive and not value > 0:
            raise self.fail(path + (key,), "must be > 0")
        if minimum is not None and value < minimum:
            raise self.fail(path + (key,), f"must be >= {minimum}")
        if maximum is not None and value > maximum:
            raise self.fail(path + (key,), f"must be <= {maximum}")
        return float(value)

    def integer(self, data: dict, key: str, path: Path_, default: Any = _MISSING, *,
                minimum: Optional[int] = None) -> Any:
        if key not in data:
            if default is _MISSING:
                raise self.fail(path + (key,), "required")
            return default
        value = data[key]
        if isinstance(value, bool) or not isinstance(value, int):
            raise self.fail(path + (key,), f"expected an integer, got {value!r}")
        if minimum is not None and value < minimum:
            raise self.fail(path + (key,), f"must be >= {minimum}")
        return value

    def boolean(self, data: dict, key: str, path: Path_, default: bool) -> bool:
        value = data.get(key, default)
        if not isinstance(value, bool):
            raise self.fail(path + (key,), f"expected true/false, got {value!r}")
        return value

    def tf(self, data: dict, key: str, path: Path_, default: TransportFormatId) -> TransportFormatId:
        if key not in data:
            return default
        try:
            return TransportFormatId.parse(data[key])
        except (KeyError, ValueError):
            raise self.fail(path + (key,), f"expected TF1, TF2 or TF3, got {data[key]!r}") from None

    def build(self, path: Path_, factory: Callable[..., Any], **kwargs: Any) -> Any:
        try:
            return factory(**kwargs)
        except (ValueError, TypeError) as exc:
            raise self.fail(path, str(exc)) from None


def _nodes(r: _Reader, items: Any) -> list[NodeConfig]:
    path: Path_ = ("nodes",)
    if not isinstance(items, list) or not items:
        raise r.fail(path, "expected a non-empty list of nodes")
    allowed = {"id", "role", "x", "y", "z", "gain_db", "bc_forwarding", "initial_tf"}
    nodes = []
    for i, raw in enumerate(items):
        p = path + (i,)
        item = r.section(raw, p, allowed)
        role_name = item.get("role", "sensor")
        try:
            role = Role(str(role_name).lower())
        except ValueError:
            raise r.fail(p + ("role",), f"expected sink, relay or sensor, got {role_name!r}") from None
        nodes.append(NodeConfig(
            id=r.integer(item, "id", p, minimum=0),
            position=(r.number(item, "x", p), r.number(item, "y", p), r.number(item, "z", p, 0.0)),
            role=role,
            directivity_gain_db=r.number(item, "gain_db", p, 0.0),
            bc_forwarding_enabled=r.boolean(item, "bc_forwarding", p, True),
            initial_tf=r.tf(item, "initial_tf", p, TransportFormatId.TF3),
        ))
    return nodes


def _node_ids(r: _Reader, value: Any, path: Path_, everyone: tuple[int, ...]) -> tuple[int, ...]:
    if value == "all":
        return everyone
    if not isinstance(value, list) or not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
        raise r.fail(path, "expected a list of node ids or 'all'")
    return tuple(value)


def _traffic(r: _Reader, data: Any, sensors: tuple[int, ...]) -> TrafficConfig:
    path: Path_ = ("traffic",)
    t = r.section(data, path, {
        "measurement_period_s", "normal_decimation", "alarm_decimation", "payload_bits",
        "interval_s", "phase_offsets", "sources", "alarm",
    })
    sources = None
    if "sources" in t and t["sources"] is not None:
        sources = _node_ids(r, t["sources"], path + ("sources",), sensors)
    schedule: dict[int, tuple[tuple[float, float], ...]] = {}
    hourly_rule: dict[int, float] = {}
    alarm_path = path + ("alarm",)
    alarm = r.section(t.get("alarm"), alarm_path, {"hourly", "permanent", "windows"})
    everyone = sources if sources is not None else sensors

    def merge(windows: dict[int, tuple[tuple[float, float], ...]]) -> None:
        for node, spans in windows.items():
            schedule[node] = schedule.get(node, ()) + tuple(spans)

    if "hourly" in alarm:
        hp = alarm_path + ("hourly",)
        hourly = r.section(alarm["hourly"], hp, {"nodes", "window_s"})
        window = r.number(hourly, "window_s", hp, 900.0, minimum=0.0)
        if window > 3600:
            raise r.fail(hp + ("window_s",), "must be <= 3600")
        for node in _node_ids(r, hourly.get("nodes", "all"), hp + ("nodes",), everyone):
            hourly_rule[node] = window
    if "permanent" in alarm:
        merge(permanent_alarm(_node_ids(r, alarm["permanent"], alarm_path + ("permanent",), everyone), math.inf))
    if "windows" in alarm:
        wp = alarm_path + ("windows",)
        for key, spans in r.mapping(alarm["windows"], wp).items():
            kp = wp + (key,)
            if isinstance(key, bool) or not isinstance(key, int):
                raise r.fail(kp, "window keys must be node ids")
            ok = isinstance(spans, list) and all(
                isinstance(s, list) and len(s) == 2
                and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in s)
                and s[1] >= 0
                for s in spans
            )
            if not ok:
                raise r.fail(kp, "expected a list of [start_s, duration_s] pairs")
            merge({key: tuple((float(a), float(b)) for a, b in spans)})
    return r.build(
        path, TrafficConfig,
        measurement_period_s=r.number(t, "measurement_period_s", path, 6.0, positive=True),
        normal_decimation=r.integer(t, "normal_decimation", path, 7, minimum=1),
        alarm_decimation=r.integer(t, "alarm_decimation", path, 3, minimum=1),
        payload_bits=r.integer(t, "payload_bits", path, 420, minimum=1),
        alarm_schedule=schedule,
        hourly_alarm=hourly_rule,
        constant_interval_override_s=r.number(t, "interval_s", path, None, positive=True, nullable=True),
        phase_offsets=r.boolean(t, "phase_offsets", path, True),
        sources=sources,
    )


def parse_scenario(text: str, source: Optional[str] = None) -> Scenario:
    loader = yaml.SafeLoader(text)
    try:
        root = loader.get_single_node()
        data = loader.construct_document(root) if root is not None else None
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        line = mark.line + 1 if mark is not None else None
        raise ScenarioError(f"malformed YAML: {exc.problem or exc}", line=line, source=source) from None
    except yaml.YAMLError as exc:
        raise ScenarioError(f"malformed YAML: {exc}", source=source) from None
    finally:
        loader.dispose()

    lines: dict[Path_, int] = {}
    if root is not None:
        _collect_lines(root, (), lines)
    r = _Reader(lines, source)
    top = r.section(data, (), {
        "seed", "duration_s", "drain_s", "ring", "nodes", "channel", "phy", "mac", "icrp", "traffic",
    })

    seed = r.integer(top, "seed", (), 1, minimum=0)
    duration = r.number(top, "duration_s", (), 7200.0, positive=True)
    drain = r.number(top, "drain_s", (), 60.0, minimum=0.0)

    if ("ring" in top) == ("nodes" in top):
        raise r.fail((), "exactly one of 'ring' or 'nodes' must be given")
    if "ring" in top:
        rp: Path_ = ("ring",)
        ring = r.section(top["ring"], rp, {
            "node_distance_m", "sensors", "relays", "depth_m", "initial_tf", "choke_sensors",
        })
        scenario = build_ring_scenario(
            r.number(ring, "node_distance_m", rp, positive=True),
            r.integer(ring, "sensors", rp, 8, minimum=0),
            r.integer(ring, "relays", rp, 4, minimum=0),
            initial_tf=r.tf(ring, "initial_tf", rp, TransportFormatId.TF3),
            choke_sensors=r.boolean(ring, "choke_sensors", rp, False),
            depth_m=r.number(ring, "depth_m", rp, 0.0),
        )
        nodes = scenario.nodes
        base_phy = scenario.phy
    else:
        nodes = tuple(_nodes(r, top["nodes"]))
        base_phy = PhyConfig()
    sensors = tuple(sorted(n.id for n in nodes if n.role is Role.SENSOR))

    cp: Path_ = ("channel",)
    c = r.section(top.get("channel"), cp, {
        "frequency_khz", "spreading_k", "sound_speed_mps", "noise_db", "threshold_db",
    })
    channel = r.build(
        cp, ChannelParams,
        frequency_khz=r.number(c, "frequency_khz", cp, 25.0, positive=True),
        spreading_k=r.number(c, "spreading_k", cp, 1.5, minimum=1.0, maximum=2.0),
        sound_speed_mps=r.number(c, "sound_speed_mps", cp, 1500.0, positive=True),
        noise_db=r.number(c, "noise_db", cp, 50.0),
        threshold_db=r.number(c, "threshold_db", cp, 10.0),
    )

    pp: Path_ = ("phy",)
    p = r.section(top.get("phy"), pp, {
        "ack_bits", "status_base_bits", "status_hop_bits", "sync_overhead_s", "max_frame_s",
        "source_level_db", "calibration_range_m", "cs_margin_db", "thresholds_db",
    })
    thresholds = {}
    for key, value in r.mapping(p.get("thresholds_db"), pp + ("thresholds_db",)).items():
        kp = pp + ("thresholds_db", key)
        try:
            tf = TransportFormatId.parse(key)
        except (KeyError, ValueError):
            raise r.fail(kp, "expected TF1, TF2 or TF3") from None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise r.fail(kp, "expected a number")
        thresholds[tf] = float(value)
    phy = r.build(
        pp, PhyConfig,
        ack_bits=r.integer(p, "ack_bits", pp, base_phy.ack_bits, minimum=1),
        status_base_bits=r.integer(p, "status_base_bits", pp, base_phy.status_base_bits, minimum=1),
        status_hop_bits=r.integer(p, "status_hop_bits", pp, base_phy.status_hop_bits, minimum=0),
        sync_overhead_s=r.number(p, "sync_overhead_s", pp, base_phy.sync_overhead_s, minimum=0.0),
        max_frame_duration_s=r.number(p, "max_frame_s", pp, base_phy.max_frame_duration_s,
                                      positive=True, nullable=True),
        source_level_db=r.number(p, "source_level_db", pp, base_phy.source_level_db, nullable=True),
        calibration_range_m=r.number(p, "calibration_range_m", pp, base_phy.calibration_range_m,
                                     positive=True, nullable=True),
        cs_margin_db=r.number(p, "cs_margin_db", pp, base_phy.cs_margin_db),
        tf_thresholds_db=thresholds,
    )
    if phy.max_frame_duration_s is not None and phy.max_frame_duration_s <= phy.sync_overhead_s:
        raise r.fail(pp + ("max_frame_s",), "must exceed sync_overhead_s")

    mp: Path_ = ("mac",)
    m = r.section(top.get("mac"), mp, {
        "backoff_window_s", "ack_timeout_s", "max_retx", "ack_guard_s", "ack_timeout_guard_s", "queue_limit",
    })
    mac = r.build(
        mp, MacConfig,
        backoff_window_s=r.number(m, "backoff_window_s", mp, None, positive=True, nullable=True),
        ack_timeout_s=r.number(m, "ack_timeout_s", mp, None, positive=True, nullable=True),
        max_retx=r.integer(m, "max_retx", mp, 2, minimum=0),
        ack_guard_s=r.number(m, "ack_guard_s", mp, 0.1, positive=True),
        ack_timeout_guard_s=r.number(m, "ack_timeout_guard_s", mp, 0.2, positive=True),
        queue_limit=r.integer(m, "queue_limit", mp, 32, minimum=1),
    )

    ip: Path_ = ("icrp",)
    i = r.section(top.get("icrp"), ip, {
        "hop_limit", "patience", "status_window_s", "route_lifetime_s", "rate_up_successes",
        "rate_down_failures", "rate_adaptation", "max_tf", "dup_cache_size", "bc_jitter_frames",
    })
    icrp = r.build(
        ip, IcrpConfig,
        hop_limit=r.integer(i, "hop_limit", ip, 4, minimum=1),
        patience=r.integer(i, "patience", ip, 2, minimum=1),
        status_window_s=r.number(i, "status_window_s", ip, None, minimum=0.0, nullable=True),
        route_lifetime_s=r.number(i, "route_lifetime_s", ip, None, positive=True, nullable=True),
        rate_up_successes=r.integer(i, "rate_up_successes", ip, 3, minimum=1),
        rate_down_failures=r.integer(i, "rate_down_failures", ip, 2, minimum=1),
        rate_adaptation=r.boolean(i, "rate_adaptation", ip, True),
        max_tf=r.tf(i, "max_tf", ip, TransportFormatId.TF3),
        dup_cache_size=r.integer(i, "dup_cache_size", ip, 256, minimum=1),
        bc_jitter_frames=r.number(i, "bc_jitter_frames", ip, 2.0, minimum=0.0),
    )

    traffic = _traffic(r, top.get("traffic"), sensors)
    scenario = Scenario(
        nodes=nodes, channel=channel, traffic=traffic, duration=duration, seed=seed,
        phy=phy, mac=mac, icrp=icrp, drain_s=drain,
    )
    try:
        return validate_scenario(scenario)
    except ScenarioError as exc:
        anchor: Path_ = ("nodes",) if "nodes" in top else ("ring",)
        if "traffic" in exc.message or "alarm" in exc.message:
            anchor = ("traffic",)
        raise ScenarioError(exc.message, line=r.line(anchor), source=source) from None


def load_scenario(path: Union[str, Path]) -> Scenario:
    path = Path(path)
    return parse_scenario(path.read_text(encoding="utf-8"), source=str(path))


def override(scenario: Scenario, *, seed: Optional[int] = None, duration: Optional[float] = None) -> Scenario:
    if seed is not None:
        scenario = replace(scenario, seed=seed)
    if duration is not None:
        scenario = replace(scenario, duration=duration)
    return validate_scenario(scenario)
