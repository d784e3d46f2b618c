import random
from collections import Counter

import pytest
from hypothesis import given
from hypothesis import strategies as st

from emfimap.classify import (FaultObservation, FlipBalance, NominalProfile,
                              Z95, Z99, aggregate_coordinate_stats, classify_session,
                              dominant_flip_direction, make_stats, wilson_interval)
from emfimap.geometry import ProbeCoordinate
from emfimap.protocol import parse_session
from emfimap.targets import NOMINAL_SNAPSHOTS, regs_line
from emfimap.taxonomy import FaultClass, FaultDetail

from oracles import wilson_roots

MCU = NominalProfile("MARK", 10)
NOMINAL = ["BOOT"] + [f"MARK loop seq={i}" for i in range(10)] + ["OK"]


def classify(lines, responded=True, nominal=MCU):
    return classify_session(parse_session(lines, responded), nominal)


def test_nominal_is_none():
    obs = classify(NOMINAL)
    assert obs.fault_class is FaultClass.NONE and obs.evidence == ()


def test_cf_skip():
    lines = ["BOOT"] + [f"MARK loop seq={i}" for i in range(7)] + [
        "CF_SKIP iter=7 expected=10", "OK"]
    obs = classify(lines)
    assert (obs.fault_class, obs.detail) == (FaultClass.CONTROL_FLOW, FaultDetail.SKIP)
    assert obs.evidence == (8,)


def test_cf_exit():
    obs = classify(["BOOT", "MARK loop seq=0", "CF_EXIT iter=1", "OK"])
    assert obs.detail is FaultDetail.EARLY_EXIT


def test_loop_count_mismatch():
    obs = classify(NOMINAL[:5] + ["OK"])
    assert obs.detail is FaultDetail.LOOP_COUNT_MISMATCH
    assert obs.evidence == (1, 2, 3, 4)


def test_crc_plus_hang_is_system_level():
    obs = classify(NOMINAL[:-1] + ["CRC_ERR block=1 got=0x1234 want=0x5678"], responded=False)
    assert (obs.fault_class, obs.detail) == (FaultClass.SYSTEM_LEVEL, FaultDetail.HANG)


def test_reset_beats_crc():
    obs = classify(NOMINAL[:3] + ["CRC_ERR block=1 got=0x1 want=0x2", "RESET cause=emfi", "BOOT"])
    assert (obs.fault_class, obs.detail) == (FaultClass.SYSTEM_LEVEL, FaultDetail.RESET)
    assert obs.evidence == (4,)


def test_malformed_is_system_level():
    obs = classify(NOMINAL[:4] + ["M#RK l00p"] + NOMINAL[4:])
    assert (obs.fault_class, obs.detail) == (FaultClass.SYSTEM_LEVEL, FaultDetail.MALFORMED_OUTPUT)
    assert obs.evidence == (4,)


def test_data_beats_control_flow():
    obs = classify(["BOOT", "CF_SKIP iter=0 expected=10", "CRC_ERR block=0 got=0x1 want=0x2", "OK"])
    assert (obs.fault_class, obs.detail) == (FaultClass.DATA_CORRUPTION, FaultDetail.CRC_MISMATCH)


def test_bitflips_counted():
    prof = NominalProfile("MARK", 1)
    obs = classify(["BOOT", "MARK sentinel seq=0", "BITFLIP addr=0x0001 bit=1 dir=01",
                    "BITFLIP addr=0x0002 bit=0 dir=10", "BITFLIP addr=0x0003 bit=3 dir=01", "OK"],
                   nominal=prof)
    assert obs.detail is FaultDetail.BIT_FLIPS
    assert (obs.bitflips, obs.flips_zero_to_one, obs.flips_one_to_zero) == (3, 2, 1)


def test_register_deviation_and_halt():
    prof = NominalProfile("REGS", 3, NOMINAL_SNAPSHOTS)
    good = ["BOOT"] + [regs_line(s) for s in NOMINAL_SNAPSHOTS] + ["OK"]
    assert classify(good, nominal=prof).fault_class is FaultClass.NONE
    bad = dict(NOMINAL_SNAPSHOTS[2])
    bad["a3"] ^= 0x10
    lines = good[:3] + [regs_line(bad), "OK"]
    obs = classify(lines, nominal=prof)
    assert (obs.detail, obs.evidence) == (FaultDetail.REGISTER_DEVIATION, (3,))
    halted = good[:2] + ["HALT pc=0x400d1a5d"]
    assert classify(halted, nominal=prof).detail is FaultDetail.HALT


def test_hang_without_lines():
    obs = classify([], responded=False)
    assert obs.detail is FaultDetail.HANG and obs.evidence == ()


def test_detail_must_match_class():
    with pytest.raises(ValueError):
        FaultObservation(FaultClass.CONTROL_FLOW, FaultDetail.HANG)


def test_order_after_first_trigger_irrelevant():
    rnd = random.Random(5)
    base = ["BOOT", "MARK loop seq=0", "CRC_ERR block=2 got=0x1 want=0x2"]
    tail = ["CRC_ERR block=1 got=0x3 want=0x2", "CF_SKIP iter=1 expected=10",
            "MARK loop seq=1", "OK", "CRC_ERR block=3 got=0x9 want=0x2"]
    ref = classify(base + tail)
    for _ in range(50):
        rnd.shuffle(tail)
        obs = classify(base + tail)
        assert (obs.fault_class, obs.detail) == (ref.fault_class, ref.detail)


def test_wilson_zero():
    lo, hi = wilson_interval(0, 100)
    assert lo == 0.0 and hi > 0.0


def test_wilson_half_matches_root_oracle():
    lo, hi = wilson_interval(50, 100)
    rlo, rhi = wilson_roots(50, 100, 1.96)
    assert (lo, hi) == pytest.approx((rlo, rhi), abs=1e-12)
    assert (round(lo, 3), round(hi, 3)) == (0.404, 0.596)


@given(st.integers(1, 5000).flatmap(lambda n: st.tuples(st.integers(0, n), st.just(n))))
def test_wilson_contains_rate(kn):
    k, n = kn
    for z in (Z95, Z99):
        lo, hi = wilson_interval(k, n, z)
        assert 0.0 <= lo <= k / n <= hi <= 1.0
        if 0 < k < n:
            assert (lo, hi) == pytest.approx(wilson_roots(k, n, z), abs=1e-9)


def test_z99():
    assert Z99 == pytest.approx(2.5758293, abs=1e-6)


def _obs(cls):
    detail = {FaultClass.NONE: FaultDetail.NONE, FaultClass.CONTROL_FLOW: FaultDetail.SKIP,
              FaultClass.DATA_CORRUPTION: FaultDetail.BIT_FLIPS,
              FaultClass.SYSTEM_LEVEL: FaultDetail.RESET}[cls]
    return FaultObservation(cls, detail, () if cls is FaultClass.NONE else (1,))


def test_aggregate_zero_faults():
    c = ProbeCoordinate(0.0, 0.0, 0.0)
    (s,) = aggregate_coordinate_stats([(c, _obs(FaultClass.NONE))] * 100)
    assert s.trials == 100 and s.fault_rate == 0.0 and s.wilson_low == 0.0


def test_aggregate_half():
    c = ProbeCoordinate(0.0, 0.0, 0.0)
    obs = [(c, _obs(FaultClass.NONE))] * 50 + [(c, _obs(FaultClass.CONTROL_FLOW))] * 50
    (s,) = aggregate_coordinate_stats(obs)
    assert s.fault_rate == 0.5
    assert (s.wilson_low, s.wilson_high) == pytest.approx(wilson_roots(50, 100, 1.96))


def test_aggregate_bruteforce_and_order_independent():
    rnd = random.Random(8)
    coords = [ProbeCoordinate(x * 0.5, y * 0.5, z) for x in range(4) for y in range(3)
              for z in (0.0, 1.0)]
    data = [(rnd.choice(coords), _obs(rnd.choice(list(FaultClass))), rnd.randrange(5))
            for _ in range(3000)]
    stats = aggregate_coordinate_stats(data)
    assert [s.coordinate.sort_key() for s in stats] == sorted(s.coordinate.sort_key()
                                                              for s in stats)
    for s in stats:
        mine = [d for d in data if d[0] == s.coordinate]
        counts = Counter(o.fault_class for _, o, _ in mine)
        assert s.trials == len(mine)
        assert s.class_counts == {c: counts.get(c, 0) for c in FaultClass}
        assert sum(s.class_counts.values()) == s.trials
        assert s.error_count == sum(e for _, _, e in mine)
        assert 0 <= s.wilson_low <= s.fault_rate <= s.wilson_high <= 1
    rnd.shuffle(data)
    assert aggregate_coordinate_stats(data) == stats


@pytest.mark.parametrize("balance,expected", [
    ((12, 3), FlipBalance.ZERO_TO_ONE), ((3, 12), FlipBalance.ONE_TO_ZERO),
    ((5, 5), FlipBalance.BALANCED), ((0, 0), FlipBalance.BALANCED)])
def test_dominant_direction(balance, expected):
    s = make_stats(ProbeCoordinate(0, 0, 0), {FaultClass.NONE: 1}, *balance)
    assert dominant_flip_direction(s) is expected


def test_nominal_profile_round_trip():
    prof = NominalProfile("REGS", 3, NOMINAL_SNAPSHOTS)
    assert NominalProfile.from_dict(prof.to_dict()) == prof
