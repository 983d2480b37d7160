import pytest

from icrp_sim.channel import ActiveTransmission, Arrival, ChannelParams, LossReason
from icrp_sim.errors import ContractViolation
from icrp_sim.phy import (
    ModemPhase,
    ModemState,
    PhyConfig,
    TransportFormat,
    TransportFormatId,
    fragment,
    frame_duration,
)

TF1, TF2, TF3 = TransportFormatId.TF1, TransportFormatId.TF2, TransportFormatId.TF3


def fmt(tf, overhead=0.0):
    return PhyConfig(sync_overhead_s=overhead).format(tf)


def test_frame_durations_for_a_420_bit_packet():
    assert frame_duration(420, fmt(TF1)) == pytest.approx(2.1)
    assert frame_duration(420, fmt(TF2)) == pytest.approx(1.05)
    assert frame_duration(420, fmt(TF3)) == pytest.approx(420 / 1700)


def test_frame_duration_rejects_empty_frames():
    with pytest.raises(ValueError):
        frame_duration(0, fmt(TF3))


def test_transport_format_rates_are_fixed():
    with pytest.raises(ValueError):
        TransportFormat(TF1, 400)


def test_fragment_is_minimal_and_balanced():
    frames = fragment(420, fmt(TF1), 1.0)
    assert [f.payload_bits for f in frames] == [140, 140, 140]
    assert [f.fragment_index for f in frames] == [0, 1, 2]
    assert all(f.fragment_total == 3 for f in frames)


def test_fragment_without_need_returns_one_frame():
    frames = fragment(420, fmt(TF3), 1.0)
    assert len(frames) == 1 and frames[0].payload_bits == 420


def test_fragment_cap_must_exceed_overhead():
    with pytest.raises(ValueError):
        fragment(420, fmt(TF1, overhead=0.5), 0.5)


def test_airtime_sums_the_fragment_burst():
    phy = PhyConfig(sync_overhead_s=0.1, max_frame_duration_s=1.0)
    # 180 bits fit per frame at TF1, so three frames of 140 bits.
    assert phy.airtime(420, TF1) == pytest.approx(3 * (0.1 + 0.7))
    assert len(phy.frames(420, TF1)) == 3


def test_status_bits_grow_per_hop():
    phy = PhyConfig()
    assert phy.status_bits(1) == 96
    assert phy.status_bits(3) == 128


def test_per_format_threshold_override():
    params = ChannelParams()
    phy = PhyConfig(tf_thresholds_db={TF3: 14.0})
    assert phy.threshold_db(TF3, params) == 14.0
    assert phy.threshold_db(TF1, params) == params.threshold_db


def test_tf_step_is_clamped():
    assert TF3.step(+1, TF3) is TF3
    assert TF1.step(-1, TF3) is TF1
    assert TF1.step(+1, TF2) is TF2
    assert TF2.step(+1, TF2) is TF2


def test_tf_parse():
    assert TransportFormatId.parse("tf2") is TF2
    assert TransportFormatId.parse(3) is TF3
    with pytest.raises(KeyError):
        TransportFormatId.parse("TF9")


def make_arrival(aid, level, start, end):
    tx = ActiveTransmission(tx_node=aid, tx_position=(0.0, 0.0, 0.0), source_level_db=120.0,
                            start=start, duration=end - start)
    return Arrival(aid, tx, level, start, end, detectable=level >= 50.0)


def test_modem_rejects_double_transmit():
    m = ModemState(1, ChannelParams())
    m.tx_begin(0.0, 1.0)
    assert m.phase is ModemPhase.TX
    with pytest.raises(ContractViolation):
        m.tx_begin(0.5, 1.5)
    m.tx_end(1.0)
    with pytest.raises(ContractViolation):
        m.tx_end(1.0)


def test_modem_locks_first_detectable_arrival():
    m = ModemState(1, ChannelParams())
    first = make_arrival(1, 80.0, 0.0, 1.0)
    second = make_arrival(2, 80.0, 0.5, 1.5)
    m.arrival_start(first, 0.0)
    assert m.locked is first and m.carrier_busy(0.0)
    m.arrival_start(second, 0.5)
    assert m.locked is first
    assert m.arrival_end(first, 1.0).reason is LossReason.LOW_SINR
    assert m.phase is ModemPhase.IDLE


def test_undetectable_arrival_does_not_lock():
    m = ModemState(1, ChannelParams())
    faint = make_arrival(1, 40.0, 0.0, 1.0)
    m.arrival_start(faint, 0.0)
    assert m.locked is None
    assert not m.carrier_busy(0.5)


def test_clean_arrival_decodes_and_releases_lock():
    m = ModemState(1, ChannelParams())
    a = make_arrival(1, 75.0, 0.0, 1.0)
    m.arrival_start(a, 0.0)
    out = m.arrival_end(a, 1.0)
    assert out.decoded and out.sinr_db == pytest.approx(25.0)
    assert m.locked is None


def test_transmitting_during_arrival_loses_it_to_half_duplex():
    m = ModemState(1, ChannelParams())
    a = make_arrival(1, 75.0, 0.0, 1.0)
    m.arrival_start(a, 0.0)
    m.tx_begin(0.4, 0.6)
    assert m.locked is None
    m.tx_end(0.6)
    assert m.arrival_end(a, 1.0).reason is LossReason.HALF_DUPLEX
