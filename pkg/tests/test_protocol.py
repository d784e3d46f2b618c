import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emfimap.protocol import (TOKENS, FlipDirection, MalformedAttribute, NonAscii,
                              ProtocolLine, UnknownToken, crc16, diff_sentinel, parse_line,
                              parse_session)

from oracles import crc16_bitwise, naive_diff


def test_bare_token():
    ln = parse_line("OK")
    assert ln.token == "OK" and ln.attributes == () and ln.label is None


def test_cf_skip_attributes():
    ln = parse_line("CF_SKIP iter=7 expected=10")
    assert ln.token == "CF_SKIP"
    assert ln.attributes == (("iter", "7"), ("expected", "10"))


def test_marker_label():
    ln = parse_line("MARK loop seq=3\n")
    assert (ln.token, ln.label, ln.attributes) == ("MARK", "loop", (("seq", "3"),))


def test_unknown_token_position():
    with pytest.raises(UnknownToken) as exc:
        parse_line("GLITCH?")
    assert exc.value.position == 0


@pytest.mark.parametrize("raw,pos", [
    ("CF_SKIP iter=7 expected", 15),
    ("OK ", 3),
    ("CRC_ERR block=1 got= want=0x1", 16),
    ("RESET Cause=emfi", 6),
    ("MARK loop seq=1 seq", 16),
])
def test_malformed_attribute_position(raw, pos):
    with pytest.raises(MalformedAttribute) as exc:
        parse_line(raw)
    assert exc.value.position == pos


def test_non_ascii():
    with pytest.raises(NonAscii) as exc:
        parse_line("OK café=1")
    assert exc.value.position == 6
    with pytest.raises(NonAscii) as exc:
        parse_line(b"BOOT \xff")
    assert exc.value.position == 5


def test_errors_are_distinct_types():
    assert len({UnknownToken, MalformedAttribute, NonAscii}) == 3
    assert not issubclass(UnknownToken, MalformedAttribute)


_keys = st.from_regex(r"[a-z][a-z0-9_]{0,6}", fullmatch=True)
_values = st.from_regex(r"[!-<>-~]{1,10}", fullmatch=True)


@settings(max_examples=300)
@given(st.sampled_from(TOKENS), st.one_of(st.none(), _keys),
       st.lists(st.tuples(_keys, _values), max_size=5))
def test_round_trip(token, label, attrs):
    ln = ProtocolLine(token, tuple(attrs), label)
    text = ln.serialize()
    assert text.isascii()
    assert parse_line(text + "\n") == ln


def test_session_hang_empty():
    s = parse_session([], responded=False)
    assert s.hang and s.lines == [] and s.malformed == []


def test_session_all_valid():
    s = parse_session(["BOOT", "MARK loop seq=0", "OK"], True)
    assert len(s.lines) == 3 and s.malformed == [] and not s.hang
    assert s.indices == [0, 1, 2]


def test_session_garbage_recorded():
    s = parse_session(["BOOT", "~~garbage~~", "OK"], True)
    assert [ln.token for ln in s.lines] == ["BOOT", "OK"]
    assert len(s.malformed) == 1
    assert s.malformed[0].line == 1 and s.malformed[0].position == 0


def test_crc_known_values():
    assert crc16(b"") == 0xFFFF
    assert crc16(b"123456789") == 0x29B1
    assert crc16(b"\x00") == 0xE1F0


def test_crc_matches_bitwise_reference():
    rnd = random.Random(1234)
    for _ in range(1000):
        data = bytes(rnd.randrange(256) for _ in range(rnd.randrange(0, 64)))
        assert crc16(data) == crc16_bitwise(data)


def test_diff_identical():
    assert diff_sentinel(b"\xa5" * 8, b"\xa5" * 8) == []


def test_diff_single_bit():
    expected = bytes([0, 0, 0, 0xFF])
    actual = bytes([0, 0, 0, 0xFD])
    (flip,) = diff_sentinel(expected, actual)
    assert (flip.byte_offset, flip.bit_index, flip.direction) == (3, 1, FlipDirection.ONE_TO_ZERO)


def test_diff_length_mismatch():
    with pytest.raises(ValueError):
        diff_sentinel(b"\x00", b"\x00\x00")


def test_diff_random_against_naive():
    rnd = random.Random(77)
    for _ in range(50):
        a = bytes(rnd.randrange(256) for _ in range(64))
        b = bytes(rnd.randrange(256) for _ in range(64))
        got = [(f.byte_offset, f.bit_index, f.direction.value) for f in diff_sentinel(a, b)]
        assert got == naive_diff(a, b)


@given(st.binary(min_size=16, max_size=16), st.binary(min_size=16, max_size=16))
def test_diff_antisymmetry(a, b):
    ab, ba = diff_sentinel(a, b), diff_sentinel(b, a)
    assert len(ab) == len(ba)
    assert [f.direction.inverted() for f in ab] == [f.direction for f in ba]
