from dataclasses import replace

import numpy as np
import pytest

from icrp_sim.channel import received_level
from icrp_sim.config import load_scenario
from icrp_sim.network import Simulator, run
from icrp_sim.phy import TransportFormatId
from icrp_sim.protocols.mac import BROADCAST, MacPdu, PduKind
from icrp_sim.scenario import Role, build_ring_scenario, with_cell
from icrp_sim.sweep import sweep

from conftest import single_link

TF1, TF2, TF3 = TransportFormatId.TF1, TransportFormatId.TF2, TransportFormatId.TF3


def drop_acks(tx, rx, pdu, time):
    return pdu.kind is PduKind.MAC_ACK


def test_single_link_delivers_everything():
    m = run(single_link(phase_offsets=True))
    assert m.generated in (10, 11)
    assert m.pdr_pct == 100.0
    assert m.status_count == 1
    assert m.transmissions_by_kind["DATA_BC"] == 1
    assert m.transmissions_by_kind["DATA_UC"] == m.generated - 1
    assert m.loss_reasons == {}
    assert m.dominant_routes == {1: (1, 0)}


def test_latency_matches_airtime_plus_propagation():
    m = run(single_link(duration=100.0, interval_s=1000.0))
    assert m.generated == 1
    assert m.mean_latency_s == pytest.approx(420 / 1700 + 600 / 1500, abs=1e-5)


def test_unacknowledged_unicast_is_sent_max_retx_plus_one_times():
    sc = single_link(interval_s=1000.0, duration=1500.0, patience=1)
    m = run(sc, loss_script=drop_acks)
    assert m.generated == 2
    assert m.transmissions_by_kind["DATA_UC"] == sc.mac.max_retx + 1
    assert m.bc_fallbacks == 1
    assert m.route_invalidations == 1
    assert m.delivered_unique == 2
    assert m.mac_duplicates == 2
    assert m.sink_duplicates == 1
    assert m.status_count == 1


def test_route_survives_until_the_pth_consecutive_failure():
    sc = single_link(interval_s=1000.0, duration=1500.0, patience=2)
    m = run(sc, loss_script=drop_acks)
    assert m.transmissions_by_kind["DATA_UC"] == 2 * (sc.mac.max_retx + 1)
    assert m.bc_fallbacks == 1
    assert m.route_invalidations == 1


def test_runs_are_deterministic():
    sc = replace(build_ring_scenario(600.0), duration=300.0, seed=11)
    a = Simulator(sc, trace=True)
    b = Simulator(sc, trace=True)
    assert a.run() == b.run()
    assert a.trace == b.trace
    assert len(a.trace) > 0


def test_seed_changes_the_trace():
    base = replace(build_ring_scenario(600.0), duration=300.0)
    a = Simulator(replace(base, seed=1), trace=True)
    b = Simulator(replace(base, seed=2), trace=True)
    a.run()
    b.run()
    assert a.trace != b.trace


def test_simulator_runs_once():
    sim = Simulator(single_link(duration=100.0))
    sim.run()
    with pytest.raises(RuntimeError):
        sim.run()


def test_medium_levels_come_from_the_link_budget():
    sc = single_link()
    sim = Simulator(sc)
    pdu = MacPdu(PduKind.DATA_BC, src=1, dest=BROADCAST, seq=0, bits=420)
    tx = sim.medium.transmit(1, pdu, TF3, 0.25)
    expected = received_level(tx, (0.0, 0.0, 0.0), 0.0, sc.channel)
    assert sim.medium.link_level(tx, sim.medium.index[0]) == pytest.approx(expected)
    assert expected - sc.channel.noise_db > sc.channel.threshold_db


@pytest.fixture(scope="module")
def busy_ring():
    sc = with_cell(build_ring_scenario(600.0), interval_s=18.0, tf=TF3, seed=3, duration=900.0)
    return sc, run(sc)


def test_ring_accounting_invariants(busy_ring):
    sc, m = busy_ring
    assert 0 < m.delivered_unique <= m.generated
    assert sum(m.per_source_generated.values()) == m.generated
    assert sum(m.tf_usage.values()) == m.data_transmissions
    assert 0.0 <= m.pdr_pct <= 100.0
    assert all(0.0 <= f <= 1.0 for f in m.uc_time_fraction.values())


def test_ring_respects_the_hop_limit(busy_ring):
    sc, m = busy_ring
    assert m.max_tx_hop_count < sc.icrp.hop_limit
    assert m.max_delivered_hops <= sc.icrp.hop_limit


def test_each_node_rebroadcasts_a_packet_at_most_once(busy_ring):
    sc, m = busy_ring
    forwarders = sum(1 for n in sc.nodes if n.role is not Role.SINK)
    assert m.max_bc_transmissions_per_packet <= forwarders + m.bc_fallbacks


def test_single_format_network_never_uses_another(busy_ring):
    sc, _ = busy_ring
    m = run(with_cell(sc, tf=TF1, duration=300.0))
    assert set(m.tf_usage) <= {"TF1"}


def test_choked_sensors_only_broadcast_their_own_packets():
    sc = replace(build_ring_scenario(600.0, choke_sensors=True), duration=600.0)
    m = run(with_cell(sc, interval_s=18.0))
    for s in sc.sources:
        own = m.per_source_generated[s]
        assert m.link_transmissions.get((s, BROADCAST), 0) <= own


def test_empty_source_list_generates_nothing():
    sc = replace(single_link(duration=100.0), traffic=replace(single_link().traffic, sources=()))
    m = run(sc)
    assert m.generated == 0 and m.pdr_pct is None


def drop_status(tx, rx, pdu, time):
    return pdu.kind is PduKind.STATUS_UC


def test_one_flood_costs_at_most_one_broadcast_per_node():
    ring = build_ring_scenario(600.0)
    traffic = replace(ring.traffic, constant_interval_override_s=10_000.0, phase_offsets=False, sources=(5,))
    sc = replace(ring, traffic=traffic, duration=10.0)
    m = run(sc, loss_script=drop_status)
    assert m.generated == 1
    assert 1 <= m.transmissions_by_kind["DATA_BC"] <= len(sc.nodes)
    assert m.max_bc_transmissions_per_packet <= len(sc.nodes)
    assert all(m.link_transmissions.get((n.id, BROADCAST), 0) <= 1 for n in sc.nodes)
    assert m.link_transmissions.get((0, BROADCAST), 0) == 0


def mostly_monotone(values, *, rising, noise=3.0):
    """At most one step against the trend, and that one within noise."""
    steps = np.diff(values) if rising else -np.diff(values)
    against = steps[steps < 0]
    return len(against) <= 1 and bool(np.all(against >= -noise))


@pytest.fixture(scope="module")
def table_means():
    rows = sweep(build_ring_scenario(600.0), [18.0, 42.0], [TF1, TF2, TF3], [1, 2, 3, 4, 5],
                 duration=7200.0, workers=4)
    assert not any(r.error for r in rows)
    return {(r.interval_s, r.tf): r.pdr_pct for r in rows if r.kind == "mean"}


@pytest.mark.slow
def test_faster_formats_deliver_more_at_both_intervals(table_means):
    for interval in (18.0, 42.0):
        assert table_means[interval, TF3] > table_means[interval, TF2] > table_means[interval, TF1]


@pytest.mark.slow
def test_delivery_bands_at_normal_and_alarm_rates(table_means):
    assert table_means[42.0, TF3] >= 85.0
    assert table_means[18.0, TF3] >= 70.0
    assert table_means[18.0, TF1] <= 35.0
    assert table_means[42.0, TF2] - table_means[18.0, TF2] >= 25.0


@pytest.mark.slow
def test_pdr_rises_and_status_share_falls_with_interval():
    intervals = [6.0, 12.0, 18.0, 24.0, 30.0, 42.0, 60.0, 90.0, 120.0]
    rows = sweep(build_ring_scenario(600.0), intervals, [TF1, TF2, TF3], [1, 2, 3, 4, 5],
                 duration=7200.0, workers=4)
    for tf in (TF1, TF2, TF3):
        means = sorted((r.interval_s, r.pdr_pct, r.status_pct) for r in rows if r.kind == "mean" and r.tf is tf)
        pdr = np.array([p for _, p, _ in means])
        status = np.array([s for _, _, s in means])
        assert np.all(np.isfinite(pdr)) and np.all(np.isfinite(status))
        assert mostly_monotone(pdr, rising=True), (tf, pdr)
        assert mostly_monotone(status, rising=False), (tf, status)


@pytest.mark.slow
def test_only_tf3_carries_every_sensor_in_alarm(scenarios_dir):
    base = load_scenario(scenarios_dir / "all_alarm.yaml")
    pdr = {
        tf: np.mean([run(with_cell(base, tf=tf, seed=s, duration=3600.0)).pdr_pct for s in range(1, 6)])
        for tf in (TF1, TF2, TF3)
    }
    assert pdr[TF3] >= 70.0
    assert pdr[TF2] < 50.0 and pdr[TF1] < 50.0
