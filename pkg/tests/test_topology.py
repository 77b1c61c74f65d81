import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tdisched.topology import (BOLTZMANN, SPEED_OF_LIGHT_KM_S, ConstellationSpec, DEFAULT_STATIONS,
                               GroundStation, LinkBudgetParams, SlotTopology, TopologyError,
                               free_space_loss, isl_rate, parse_adjacency, propagate, sg_rate,
                               shannon_rate, write_adjacency)


def unit_params(**kw):
    """Every linear factor equals one: 0 dB everywhere and k_B*T_s = 1."""
    base = dict(p_tr=1.0, g_tr=0.0, g_re=0.0, gamma_s=0.0, t_sys=1.0, ebn0_req=0.0, link_margin=0.0,
                f_s=1.0, bandwidth=1.0, n0=1.0, k_b=1.0)
    base.update(kw)
    return LinkBudgetParams(**base)


# distance at which the path gain is exactly one for a 1 Hz carrier
UNIT_DISTANCE = SPEED_OF_LIGHT_KM_S / (4 * math.pi)


class TestFreeSpaceLoss:
    def test_unit_ratio(self):
        assert free_space_loss(UNIT_DISTANCE, 1.0) == pytest.approx(1.0, rel=1e-15)

    def test_hand_value(self):
        # 40-digit decimal evaluation of (c / (4 pi 1000 km 2 GHz))^2
        assert free_space_loss(1000.0, 2e9) == pytest.approx(1.422858414285862617555e-16, rel=1e-12)

    def test_inverse_square(self):
        assert free_space_loss(2000.0, 2e9) == pytest.approx(free_space_loss(1000.0, 2e9) / 4, rel=1e-14)

    @pytest.mark.parametrize("d,f", [(0, 1e9), (-1, 1e9), (100, 0)])
    def test_domain(self, d, f):
        with pytest.raises(TopologyError):
            free_space_loss(d, f)


class TestIslRate:
    def test_unit_cancellation(self):
        assert isl_rate(unit_params(), UNIT_DISTANCE) == pytest.approx(1.0, rel=1e-14)

    def test_linear_in_power(self):
        p = unit_params()
        assert isl_rate(unit_params(p_tr=2.0), 1234.0) == pytest.approx(2 * isl_rate(p, 1234.0), rel=1e-14)

    def test_hand_value(self):
        # 10 W, 30 dB gains, 0 dB line loss, 500 K, 10 dB Eb/N0, 3 dB margin, 2 GHz, 1000 km
        p = LinkBudgetParams(p_tr=10.0, g_tr=30.0, g_re=30.0, gamma_s=0.0, t_sys=500.0, ebn0_req=10.0,
                             link_margin=3.0, f_s=2e9, bandwidth=1e6, n0=BOLTZMANN * 500)
        assert isl_rate(p, 1000.0) == pytest.approx(10330192141.51053316, rel=1e-12)

    def test_domain(self):
        with pytest.raises(TopologyError):
            isl_rate(unit_params(), 0.0)


class TestSgRate:
    def test_snr_one(self):
        # bracket equals one, so the squared SNR is one too
        assert sg_rate(unit_params(), UNIT_DISTANCE) == pytest.approx(1.0, rel=1e-14)

    def test_snr_three(self):
        assert shannon_rate(10.0, 3.0) == pytest.approx(20.0)

    def test_snr_to_zero(self):
        assert sg_rate(unit_params(), 1e12) == pytest.approx(0.0, abs=1e-20)

    def test_square_flag(self):
        # bracket of 3 gives SNR 9 with squaring (rate log2 10) and 3 without (rate 2)
        d = UNIT_DISTANCE / math.sqrt(3)
        assert sg_rate(unit_params(), d) == pytest.approx(math.log2(10.0), rel=1e-12)
        assert sg_rate(unit_params(snr_square=False), d) == pytest.approx(2.0, rel=1e-12)

    def test_bandwidth_domain(self):
        with pytest.raises(TopologyError):
            shannon_rate(0.0, 1.0)

    @given(st.floats(100, 40000), st.floats(1.01, 3.0))
    def test_decreasing_in_distance(self, d, k):
        p = LinkBudgetParams(p_tr=10.0, g_tr=8.0, g_re=5.0, gamma_s=0.0, t_sys=300.0, ebn0_req=0.0,
                             link_margin=0.0, f_s=2e9, bandwidth=1e6, n0=BOLTZMANN * 300)
        assert isl_rate(p, d * k) < isl_rate(p, d)
        assert sg_rate(p, d * k) <= sg_rate(p, d)
        if sg_rate(p, d * k) > 1e-6:
            assert sg_rate(p, d * k) < sg_rate(p, d)


class TestTypes:
    def test_station_range(self):
        with pytest.raises(TopologyError):
            GroundStation("G", 91, 0)
        with pytest.raises(TopologyError):
            GroundStation("G", 0, -181)

    def test_spec_range(self):
        with pytest.raises(TopologyError):
            ConstellationSpec(planes=0)
        with pytest.raises(TopologyError):
            ConstellationSpec(n_observation=-1)

    def test_params_positive(self):
        with pytest.raises(TopologyError):
            unit_params(t_sys=0.0)

    def test_slot_rejects_self_loop_and_bad_rate(self):
        with pytest.raises(TopologyError):
            SlotTopology(1, {("A", "A"): 1.0})
        with pytest.raises(TopologyError):
            SlotTopology(1, {("A", "B"): math.inf})
        with pytest.raises(TopologyError):
            SlotTopology(1, {("A", "B"): 0.0})


class TestPropagate:
    def test_ring_of_two(self):
        slots = propagate(ConstellationSpec(planes=1, sats_per_plane=2, n_observation=0), [], 1, 300.0)
        assert len(slots) == 1
        assert set(slots[0].rate) == {("S0_0", "S0_1"), ("S0_1", "S0_0")}

    def test_elevation_mask(self):
        spec = ConstellationSpec(planes=3, sats_per_plane=4, min_elevation=90.0)
        for s in propagate(spec, DEFAULT_STATIONS, 4, 300.0):
            assert not any(j.startswith("G") for _, j in s.rate)

    def test_full_constellation_node_count(self):
        slots = propagate(ConstellationSpec(), DEFAULT_STATIONS, 20, 300.0, seed=1)
        assert len(slots) == 20
        assert all(len(s.nodes) == 66 + 2 + 5 for s in slots)
        assert any(j.startswith("G") for s in slots for _, j in s.rate)
        assert all(r > 0 and math.isfinite(r) for s in slots for r in s.rate.values())

    def test_deterministic(self):
        spec = ConstellationSpec(planes=2, sats_per_plane=4)
        a = propagate(spec, DEFAULT_STATIONS, 3, 300.0, seed=7)
        b = propagate(spec, DEFAULT_STATIONS, 3, 300.0, seed=7)
        assert a == b

    def test_bad_horizon(self):
        with pytest.raises(TopologyError):
            propagate(ConstellationSpec(), [], 0, 300.0)


class TestAdjacencyCsv:
    def test_header_only(self):
        assert parse_adjacency("slot,src,dst,rate_bps\n") == []

    def test_single_row(self):
        slots = parse_adjacency("slot,src,dst,rate_bps\n1,A,B,1000000\n")
        assert len(slots) == 1 and slots[0].rate == {("A", "B"): 1e6}

    def test_round_trip(self):
        slots = propagate(ConstellationSpec(planes=2, sats_per_plane=4), DEFAULT_STATIONS, 3, 300.0, seed=3)
        back = parse_adjacency(write_adjacency(slots))
        assert [s.rate for s in back] == [s.rate for s in slots]

    @pytest.mark.parametrize("body,line", [
        ("1,A,B\n", 2),
        ("1,A,B,10\n1,A,B,20\n", 3),
        ("1,A,B,10\n1,C,D,-5\n", 3),
        ("x,A,B,10\n", 2),
    ])
    def test_errors_carry_line(self, body, line):
        with pytest.raises(TopologyError, match=f"line {line}"):
            parse_adjacency("slot,src,dst,rate_bps\n" + body)

    def test_missing_header(self):
        with pytest.raises(TopologyError, match="line 1"):
            parse_adjacency("1,A,B,10\n")
