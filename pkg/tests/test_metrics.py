import pytest

from icrp_sim.errors import UndefinedMetricError
from icrp_sim.metrics import MetricsCollector, RunMetrics, compute_pdr, compute_status_pct


def test_pdr_examples():
    assert compute_pdr(RunMetrics(generated=100, delivered_unique=98)) == 98.0
    assert compute_pdr(RunMetrics(generated=10, delivered_unique=0)) == 0.0


def test_ratios_are_undefined_without_traffic():
    with pytest.raises(UndefinedMetricError):
        compute_pdr(RunMetrics())
    with pytest.raises(UndefinedMetricError):
        compute_status_pct(RunMetrics())


def test_status_pct_uses_generated_as_denominator():
    assert compute_status_pct(RunMetrics(generated=40, status_count=8)) == 20.0


def test_collector_totals_are_consistent():
    c = MetricsCollector(sources=(5, 6))
    for _ in range(3):
        c.packet_generated(5)
    c.packet_generated(6)
    c.packet_delivered(5, 2.0, 2)
    c.packet_delivered(6, 4.0, 1)
    c.status_sent()
    c.transmission(5, -1, "DATA_BC", "TF3", packet_key=(5, 0), hop_count=0, is_data=True, is_broadcast=True)
    c.transmission(1, -1, "DATA_BC", "TF3", packet_key=(5, 0), hop_count=1, is_data=True, is_broadcast=True)
    c.transmission(6, 0, "DATA_UC", "TF2", is_data=True)
    c.transmission(0, 6, "MAC_ACK", "TF2")
    m = c.finalize(100.0, events_processed=12)

    assert m.generated == sum(m.per_source_generated.values()) == 4
    assert m.delivered_unique == 2
    assert m.pdr_pct == 50.0 and m.status_pct == 25.0
    assert m.per_source_pdr == {5: pytest.approx(100 / 3), 6: 100.0}
    assert sum(m.tf_usage.values()) == m.data_transmissions == 3
    assert m.tf_usage == {"TF2": 1, "TF3": 2}
    assert m.transmissions_by_kind["MAC_ACK"] == 1
    assert m.max_bc_transmissions_per_packet == 2
    assert m.max_tx_hop_count == 1 and m.max_delivered_hops == 2
    assert m.mean_latency_s == 3.0
    assert m.events_processed == 12


def test_unicast_residency_fraction():
    c = MetricsCollector(sources=(5,))
    c.route_live(5, True, 20.0)
    c.route_live(5, False, 60.0)
    c.route_live(5, True, 80.0)
    m = c.finalize(100.0)
    assert m.uc_time_fraction[5] == pytest.approx(0.6)


def test_dominant_route_is_the_most_used():
    c = MetricsCollector(sources=(5,))
    c.route_used(5, (5, 1, 0))
    c.route_used(5, (5, 2, 0))
    c.route_used(5, (5, 2, 0))
    assert c.finalize(10.0).dominant_routes == {5: (5, 2, 0)}


def test_source_without_packets_has_undefined_pdr():
    c = MetricsCollector(sources=(5,))
    m = c.finalize(10.0)
    assert m.per_source_pdr == {5: None}
    assert m.pdr_pct is None


def test_finalize_reports_through_the_ratio_functions(monkeypatch):
    calls = []

    def fake_pdr(m):
        calls.append(m.generated)
        return 42.0

    monkeypatch.setattr("icrp_sim.metrics.compute_pdr", fake_pdr)
    c = MetricsCollector(sources=(5,))
    c.packet_generated(5)
    m = c.finalize(10.0)
    assert m.pdr_pct == 42.0 and calls == [1]
    assert m.status_pct == 0.0
