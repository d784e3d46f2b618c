"""Line-oriented observability protocol spoken by instrumented targets.

Wire format (one record per line, ASCII only)::

    TOKEN [SP label] [SP key=value]*

``TOKEN`` is one of :data:`TOKENS`. The optional label is a bare lowercase
word naming the marker stream (``MARK loop seq=3``). Keys are lowercase ASCII
(``[a-z][a-z0-9_]*``); values are non-empty printable ASCII without spaces
or ``=``. Separators are single spaces. A trailing ``\\n`` (or ``\\r\\n``) is
stripped before parsing.
"""

from __future__ import annotations

import enum
import functools
import re
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

TOKENS = ("BOOT", "MARK", "REGS", "BITFLIP", "CF_SKIP", "CF_EXIT",
          "CRC_ERR", "RESET", "HALT", "OK")

_KEY = re.compile(r"[a-z][a-z0-9_]*\Z")
_VALUE = re.compile(r"[!-<>-~]+\Z")  # printable, no space, no '='


class ProtocolError(ValueError):
    """Base for line parse failures; ``position`` is a 0-based byte offset."""

    def __init__(self, message: str, position: int, raw: str = "", line: int | None = None):
        super().__init__(message)
        self.position = position
        self.raw = raw
        self.line = line

    def __str__(self):
        where = f"byte {self.position}"
        if self.line is not None:
            where = f"line {self.line}, {where}"
        return f"{self.args[0]} ({where})"


class UnknownToken(ProtocolError):
    pass


class MalformedAttribute(ProtocolError):
    pass


class NonAscii(ProtocolError):
    pass


@dataclass(frozen=True)
class ProtocolLine:
    token: str
    attributes: Tuple[Tuple[str, str], ...] = ()
    label: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "attributes",
                           tuple((str(k), str(v)) for k, v in self.attributes))

    def get(self, key: str, default=None):
        for k, v in self.attributes:
            if k == key:
                return v
        return default

    def serialize(self) -> str:
        """Wire form without the line terminator."""
        head = [self.token] if self.label is None else [self.token, self.label]
        return " ".join(head + [f"{k}={v}" for k, v in self.attributes])

    def __str__(self):
        return self.serialize()


def line(token: str, label: Optional[str] = None, **attrs) -> ProtocolLine:
    """Build a line; attribute order follows keyword order."""
    return ProtocolLine(token, tuple((k, _fmt(v)) for k, v in attrs.items()), label)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    return str(v)


def parse_line(raw: str | bytes) -> ProtocolLine:
    if isinstance(raw, (bytes, bytearray)):
        if not raw.isascii():
            pos = next(i for i, b in enumerate(raw) if b > 0x7F)
            raise NonAscii(f"non-ASCII byte 0x{raw[pos]:02x}", pos, repr(raw))
        raw = raw.decode("ascii")
    return _parse_text(raw)


# Simulated sessions repeat the same few lines; ProtocolLine is immutable.
@functools.lru_cache(maxsize=4096)
def _parse_text(raw: str) -> ProtocolLine:
    if not raw.isascii():
        pos = next(i for i, ch in enumerate(raw) if ord(ch) > 0x7F)
        raise NonAscii(f"non-ASCII character {raw[pos]!r}", pos, raw)
    text = raw
    if text.endswith("\n"):
        text = text[:-1]
        if text.endswith("\r"):
            text = text[:-1]

    parts = text.split(" ")
    token = parts[0]
    if token not in TOKENS:
        raise UnknownToken(f"unknown token {token!r}", 0, raw)
    attrs = []
    label = None
    pos = len(token) + 1
    rest = parts[1:]
    if rest and "=" not in rest[0] and _KEY.match(rest[0]):
        label = rest[0]
        pos += len(label) + 1
        rest = rest[1:]
    for part in rest:
        key, eq, value = part.partition("=")
        if not eq or not _KEY.match(key) or not _VALUE.match(value):
            raise MalformedAttribute(f"malformed attribute {part!r}", pos, raw)
        attrs.append((key, value))
        pos += len(part) + 1
    return ProtocolLine(token, tuple(attrs), label)


@dataclass
class SessionParse:
    """Parsed capture of one trial.

    ``indices[k]`` is the raw line number of ``lines[k]``; each error in
    ``malformed`` carries its own ``line`` number.
    """

    lines: List[ProtocolLine] = field(default_factory=list)
    indices: List[int] = field(default_factory=list)
    malformed: List[ProtocolError] = field(default_factory=list)
    hang: bool = False

    def entries(self) -> Iterable[Tuple[int, ProtocolLine]]:
        return zip(self.indices, self.lines)


def parse_session(raw_lines: Sequence[str], responded: bool) -> SessionParse:
    out = SessionParse(hang=not responded)
    for n, raw in enumerate(raw_lines):
        try:
            parsed = parse_line(raw)
        except ProtocolError as exc:
            exc.line = n
            out.malformed.append(exc)
        else:
            out.lines.append(parsed)
            out.indices.append(n)
    return out


# CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, no reflection, xorout 0.
def _crc_table() -> List[int]:
    table = []
    for byte in range(256):
        crc = byte << 8
        for _ in range(8):
            crc = ((crc << 1) ^ 0x1021) if crc & 0x8000 else (crc << 1)
        table.append(crc & 0xFFFF)
    return table


_CRC_TABLE = _crc_table()


def crc16(data: bytes, crc: int = 0xFFFF) -> int:
    for b in data:
        crc = ((crc << 8) & 0xFFFF) ^ _CRC_TABLE[((crc >> 8) ^ b) & 0xFF]
    return crc


class FlipDirection(enum.Enum):
    ZERO_TO_ONE = "01"
    ONE_TO_ZERO = "10"

    def inverted(self) -> "FlipDirection":
        if self is FlipDirection.ZERO_TO_ONE:
            return FlipDirection.ONE_TO_ZERO
        return FlipDirection.ZERO_TO_ONE


@dataclass(frozen=True, order=True)
class BitFlip:
    byte_offset: int
    bit_index: int
    direction: FlipDirection = field(compare=False)

    def to_line(self) -> ProtocolLine:
        return line("BITFLIP", addr=f"0x{self.byte_offset:04x}", bit=self.bit_index,
                    dir=self.direction.value)


SentinelDiff = List[BitFlip]


def diff_sentinel(expected: bytes, actual: bytes) -> SentinelDiff:
    """Every differing bit, sorted by (byte offset, bit index)."""
    if len(expected) != len(actual):
        raise ValueError(
            f"sentinel length mismatch: expected {len(expected)} bytes, got {len(actual)}")
    flips = []
    for offset, (a, b) in enumerate(zip(expected, actual)):
        x = a ^ b
        if not x:
            continue
        for bit in range(8):
            if x >> bit & 1:
                d = FlipDirection.ZERO_TO_ONE if b >> bit & 1 else FlipDirection.ONE_TO_ZERO
                flips.append(BitFlip(offset, bit, d))
    return flips
