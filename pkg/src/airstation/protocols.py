"""Octet-level codecs for the station's sensors.

PMS5003 frame (32 octets, all words big-endian)::

    offset  size  field
    0       2     sync 0x42 0x4D
    2       2     frame length, always 28 (octets after this word)
    4       26    13 data words: pm1.0/pm2.5/pm10 CF=1, pm1.0/pm2.5/pm10
                  atmospheric, particle counts >0.3/0.5/1.0/2.5/5.0/10 um
                  per 0.1 L, reserved
    30      2     checksum: sum of octets 0..29, modulo 65536

DHT11 frame (5 octets)::

    humidity_int, humidity_dec, temp_int, temp_dec, checksum
    checksum = (sum of the first four octets) & 0xFF
"""

from __future__ import annotations

import operator
import struct
import time
import warnings
from dataclasses import dataclass, field, fields
from enum import Enum
from typing import Iterable, Iterator

PMS_SYNC = b"\x42\x4d"
PMS_FRAME_LEN = 32
PMS_LENGTH_WORD = 28
_PMS_BODY = struct.Struct(">2sH13H")
_U16 = struct.Struct(">H")

DHT11_FRAME_LEN = 5
DHT11_RATED_TEMP = (0, 50)
DHT11_RATED_HUMIDITY = (20, 90)


class FrameError(ValueError):
    """A window of octets is not a valid frame."""


class Truncated(FrameError):
    """Fewer octets than a full frame; wait for more."""


class BadSync(FrameError):
    pass


class BadLength(FrameError):
    pass


class BadChecksum(FrameError):
    pass


class Dht11RangeWarning(UserWarning):
    """A DHT11 reading lies outside the sensor's rated range."""


class SensorKind(Enum):
    PMS5003 = "pms5003"
    DHT11 = "dht11"
    ADC = "adc"

    @property
    def code(self) -> int:
        return _KIND_CODES[self]

    @classmethod
    def from_code(cls, code: int) -> "SensorKind":
        for kind, c in _KIND_CODES.items():
            if c == code:
                return kind
        raise ValueError(f"unknown sensor kind code 0x{code:02x}")


_KIND_CODES = {SensorKind.PMS5003: 0x01, SensorKind.DHT11: 0x02, SensorKind.ADC: 0x03}


@dataclass(frozen=True)
class Pms5003Frame:
    pm1_0_cf1: int = 0
    pm2_5_cf1: int = 0
    pm10_cf1: int = 0
    pm1_0_atm: int = 0
    pm2_5_atm: int = 0
    pm10_atm: int = 0
    counts_0_3um: int = 0
    counts_0_5um: int = 0
    counts_1_0um: int = 0
    counts_2_5um: int = 0
    counts_5_0um: int = 0
    counts_10um: int = 0
    reserved: int = 0

    def __post_init__(self) -> None:
        for name, v in zip(_PMS_FIELDS, _pms_words(self)):
            if not isinstance(v, int) or not 0 <= v <= 0xFFFF:
                raise ValueError(f"{name}={v!r} does not fit in 16 bits")

    @property
    def counts(self) -> tuple[int, ...]:
        return (
            self.counts_0_3um,
            self.counts_0_5um,
            self.counts_1_0um,
            self.counts_2_5um,
            self.counts_5_0um,
            self.counts_10um,
        )

    @property
    def counts_monotone(self) -> bool:
        c = self.counts
        return all(a >= b for a, b in zip(c, c[1:]))


_PMS_FIELDS = tuple(f.name for f in fields(Pms5003Frame))
_pms_words = operator.attrgetter(*_PMS_FIELDS)


def pms5003_encode(frame: Pms5003Frame) -> bytes:
    body = _PMS_BODY.pack(PMS_SYNC, PMS_LENGTH_WORD, *_pms_words(frame))
    return body + _U16.pack(sum(body) & 0xFFFF)


def pms5003_decode(window: bytes | bytearray | memoryview, offset: int = 0) -> tuple[Pms5003Frame, int]:
    """Decode one frame at ``window[offset:]``.

    Returns the frame and the number of octets consumed (always 32). Never
    looks beyond ``offset + 32``.
    """
    avail = len(window) - offset
    head = bytes(window[offset : offset + min(avail, 2)])
    if head != PMS_SYNC[: len(head)]:
        raise BadSync(f"expected 42 4d, got {head.hex(' ')}")
    if avail >= 4:
        (length,) = _U16.unpack_from(window, offset + 2)
        if length != PMS_LENGTH_WORD:
            raise BadLength(f"length word {length}, expected {PMS_LENGTH_WORD}")
    if avail < PMS_FRAME_LEN:
        raise Truncated(f"{avail} of {PMS_FRAME_LEN} octets available")
    body = bytes(window[offset : offset + PMS_FRAME_LEN - 2])
    (declared,) = _U16.unpack_from(window, offset + PMS_FRAME_LEN - 2)
    computed = sum(body) & 0xFFFF
    if declared != computed:
        raise BadChecksum(f"checksum 0x{declared:04x}, computed 0x{computed:04x}")
    _, _, *words = _PMS_BODY.unpack(body)
    return Pms5003Frame(*words), PMS_FRAME_LEN


@dataclass
class ScanStats:
    frames: int = 0
    skipped_octets: int = 0
    bad_checksum: int = 0
    bad_length: int = 0


class Pms5003Scanner:
    """Recovers PMS5003 frames from an arbitrary octet stream.

    On any sync, length or checksum failure the scanner advances one octet
    and tries again. A partial frame at the end of the buffer is held until
    more octets arrive. One instance per input stream.
    """

    def __init__(self) -> None:
        self._buf = bytearray()
        self.stats = ScanStats()

    @property
    def pending(self) -> int:
        return len(self._buf)

    def feed(self, data: bytes) -> list[Pms5003Frame]:
        self._buf += data
        buf = self._buf
        pos = 0
        out = []
        while pos < len(buf):
            if buf[pos] != PMS_SYNC[0]:
                nxt = buf.find(PMS_SYNC[0], pos + 1)
                nxt = len(buf) if nxt < 0 else nxt
                self.stats.skipped_octets += nxt - pos
                pos = nxt
                continue
            try:
                frame, used = pms5003_decode(buf, pos)
            except Truncated:
                break
            except FrameError as exc:
                if isinstance(exc, BadChecksum):
                    self.stats.bad_checksum += 1
                elif isinstance(exc, BadLength):
                    self.stats.bad_length += 1
                self.stats.skipped_octets += 1
                pos += 1
                continue
            out.append(frame)
            self.stats.frames += 1
            pos += used
        del buf[:pos]
        return out


def resync(stream: Iterable[bytes], scanner: Pms5003Scanner | None = None) -> Iterator[Pms5003Frame]:
    """Yield every valid PMS5003 frame found in a stream of octet chunks."""
    scanner = scanner or Pms5003Scanner()
    for chunk in stream:
        yield from scanner.feed(chunk)


@dataclass(frozen=True)
class Dht11Frame:
    humidity_int: int
    humidity_dec: int
    temp_int: int
    temp_dec: int
    checksum: int = None  # computed when omitted

    def __post_init__(self) -> None:
        for name in ("humidity_int", "humidity_dec", "temp_int", "temp_dec"):
            v = getattr(self, name)
            if not isinstance(v, int) or not 0 <= v <= 0xFF:
                raise ValueError(f"{name}={v!r} is not an octet")
        expected = (self.humidity_int + self.humidity_dec + self.temp_int + self.temp_dec) & 0xFF
        if self.checksum is None:
            object.__setattr__(self, "checksum", expected)
        elif self.checksum != expected:
            raise ValueError(f"checksum {self.checksum} does not match payload ({expected})")

    @classmethod
    def from_values(cls, humidity: float, temperature: float) -> "Dht11Frame":
        """Build a frame from %RH and degC with one decimal of resolution."""
        h10, t10 = round(humidity * 10), round(temperature * 10)
        return cls(h10 // 10, h10 % 10, t10 // 10, t10 % 10)

    @property
    def humidity(self) -> float:
        return self.humidity_int + self.humidity_dec / 10

    @property
    def temperature(self) -> float:
        return self.temp_int + self.temp_dec / 10

    @property
    def in_rated_range(self) -> bool:
        lo_t, hi_t = DHT11_RATED_TEMP
        lo_h, hi_h = DHT11_RATED_HUMIDITY
        return lo_t <= self.temperature <= hi_t and lo_h <= self.humidity <= hi_h


def dht11_encode(frame: Dht11Frame) -> bytes:
    return bytes((frame.humidity_int, frame.humidity_dec, frame.temp_int, frame.temp_dec, frame.checksum))


def dht11_decode(data: bytes) -> Dht11Frame:
    """Validate and decode a 5-octet DHT11 frame.

    Readings outside the rated 0-50 degC / 20-90 %RH band are still
    returned, with a :class:`Dht11RangeWarning`.
    """
    if len(data) != DHT11_FRAME_LEN:
        raise Truncated(f"DHT11 frame is {len(data)} octets, expected {DHT11_FRAME_LEN}")
    h_int, h_dec, t_int, t_dec, checksum = data
    if (h_int + h_dec + t_int + t_dec) & 0xFF != checksum:
        raise BadChecksum(f"DHT11 checksum {checksum}, computed {(h_int + h_dec + t_int + t_dec) & 0xFF}")
    frame = Dht11Frame(h_int, h_dec, t_int, t_dec, checksum)
    if not frame.in_rated_range:
        warnings.warn(
            Dht11RangeWarning(f"DHT11 reading {frame.temperature} degC / {frame.humidity} %RH outside rated range"),
            stacklevel=2,
        )
    return frame


@dataclass(frozen=True)
class SensorFrame:
    """Raw octets of one validated frame, before field decoding."""

    kind: SensorKind
    data: bytes
    received_at: float = field(default_factory=time.monotonic)

    def __post_init__(self) -> None:
        if self.kind is SensorKind.PMS5003:
            if len(self.data) != PMS_FRAME_LEN or self.data[:2] != PMS_SYNC:
                raise ValueError("PMS5003 frames are 32 octets starting 42 4d")
        elif self.kind is SensorKind.DHT11 and len(self.data) != DHT11_FRAME_LEN:
            raise ValueError("DHT11 frames are 5 octets")


# Capture dump: back-to-back records of
#   kind code (1 octet) | payload length (4 octets, big-endian) | payload
_DUMP_HEADER = struct.Struct(">BI")


class MalformedDump(ValueError):
    def __init__(self, offset: int, reason: str) -> None:
        super().__init__(f"offset {offset}: {reason}")
        self.offset = offset


@dataclass(frozen=True)
class DumpRecord:
    kind: SensorKind
    payload: bytes


def encode_dump(records: Iterable[DumpRecord]) -> bytes:
    out = bytearray()
    for rec in records:
        out += _DUMP_HEADER.pack(rec.kind.code, len(rec.payload))
        out += rec.payload
    return bytes(out)


def decode_dump(data: bytes) -> list[DumpRecord]:
    records = []
    pos = 0
    while pos < len(data):
        if len(data) - pos < _DUMP_HEADER.size:
            raise MalformedDump(pos, "truncated record header")
        code, length = _DUMP_HEADER.unpack_from(data, pos)
        try:
            kind = SensorKind.from_code(code)
        except ValueError:
            raise MalformedDump(pos, f"unknown kind byte 0x{code:02x}") from None
        start = pos + _DUMP_HEADER.size
        if start + length > len(data):
            raise MalformedDump(pos, f"payload of {length} octets runs past end of file")
        records.append(DumpRecord(kind, data[start : start + length]))
        pos = start + length
    return records


def write_dump(path, records: Iterable[DumpRecord]) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_dump(records))


def read_dump(path) -> list[DumpRecord]:
    with open(path, "rb") as fh:
        return decode_dump(fh.read())
