import random
import struct
import warnings

import pytest
from hypothesis import given, strategies as st

from airstation.protocols import (
    BadChecksum,
    BadLength,
    BadSync,
    Dht11Frame,
    Dht11RangeWarning,
    DumpRecord,
    MalformedDump,
    Pms5003Frame,
    Pms5003Scanner,
    SensorFrame,
    SensorKind,
    Truncated,
    decode_dump,
    dht11_decode,
    dht11_encode,
    encode_dump,
    pms5003_decode,
    pms5003_encode,
    read_dump,
    resync,
    write_dump,
)

u16 = st.integers(0, 0xFFFF)
pms_frames = st.builds(Pms5003Frame, *[u16] * 13)


def test_all_zero_frame_octets():
    raw = pms5003_encode(Pms5003Frame())
    assert raw == bytes([0x42, 0x4D, 0x00, 0x1C]) + bytes(26) + bytes([0x00, 0xAB])


def test_reference_checksum_by_struct():
    frame = Pms5003Frame(pm2_5_atm=180, pm10_atm=108)
    raw = pms5003_encode(frame)
    assert len(raw) == 32
    assert struct.unpack(">H", raw[30:])[0] == sum(raw[:30])
    assert struct.unpack(">H", raw[12:14])[0] == 180  # data word 5: pm2.5 atmospheric
    assert struct.unpack(">H", raw[14:16])[0] == 108


@pytest.mark.parametrize("pm25, pm10", [(180, 108), (209, 118)])
def test_table_rows_round_trip(pm25, pm10):
    frame = Pms5003Frame(pm2_5_atm=pm25, pm10_atm=pm10)
    assert pms5003_decode(pms5003_encode(frame)) == (frame, 32)


@given(pms_frames)
def test_round_trip(frame):
    assert pms5003_decode(pms5003_encode(frame)) == (frame, 32)


def test_zeros_are_bad_sync():
    with pytest.raises(BadSync):
        pms5003_decode(bytes(32))


def test_checksum_increment_detected():
    raw = bytearray(pms5003_encode(Pms5003Frame(pm2_5_atm=180)))
    raw[-1] = (raw[-1] + 1) & 0xFF
    with pytest.raises(BadChecksum):
        pms5003_decode(raw)


def test_bad_length():
    raw = bytearray(pms5003_encode(Pms5003Frame()))
    raw[3] = 0x14
    with pytest.raises(BadLength):
        pms5003_decode(raw)


def test_truncated():
    raw = pms5003_encode(Pms5003Frame())
    with pytest.raises(Truncated):
        pms5003_decode(raw[:31])
    with pytest.raises(Truncated):
        pms5003_decode(raw[:1])
    with pytest.raises(BadSync):
        pms5003_decode(b"\x42\x00")


def test_decode_ignores_octets_past_frame():
    raw = pms5003_encode(Pms5003Frame(pm10_atm=7))
    frame, used = pms5003_decode(raw + b"\xff" * 10)
    assert used == 32 and frame.pm10_atm == 7
    frame, used = pms5003_decode(b"zz" + raw, offset=2)
    assert frame.pm10_atm == 7


def test_field_width_enforced():
    with pytest.raises(ValueError):
        Pms5003Frame(pm2_5_atm=65536)
    with pytest.raises(ValueError):
        Pms5003Frame(counts_10um=-1)


def test_monotone_counts_reported_not_rejected():
    frame = Pms5003Frame(counts_0_3um=1, counts_10um=5)
    assert not frame.counts_monotone
    assert pms5003_decode(pms5003_encode(frame))[0] == frame
    assert Pms5003Frame(counts_0_3um=9, counts_0_5um=3).counts_monotone


def test_every_single_octet_corruption_detected():
    rng = random.Random(7)
    frame = Pms5003Frame(*[rng.randrange(0x10000) for _ in range(13)])
    raw = pms5003_encode(frame)
    for pos in range(32):
        for flip in range(1, 256):
            bad = bytearray(raw)
            bad[pos] ^= flip
            with pytest.raises((BadSync, BadLength, BadChecksum)):
                pms5003_decode(bad)


# --- resync ---------------------------------------------------------------

def frame_bytes(**kw):
    return pms5003_encode(Pms5003Frame(**kw))


def test_garbage_prefix_skipped():
    scanner = Pms5003Scanner()
    out = scanner.feed(b"\x01\x42\x99\x42\x4d\x00\x07" + frame_bytes(pm2_5_atm=33))
    assert [f.pm2_5_atm for f in out] == [33]
    assert scanner.stats.skipped_octets == 7
    assert scanner.pending == 0


def test_valid_corrupt_valid():
    bad = bytearray(frame_bytes(pm2_5_atm=2))
    bad[10] ^= 0x01
    scanner = Pms5003Scanner()
    out = scanner.feed(frame_bytes(pm2_5_atm=1) + bytes(bad) + frame_bytes(pm2_5_atm=3))
    assert [f.pm2_5_atm for f in out] == [1, 3]
    assert scanner.stats.bad_checksum == 1
    assert scanner.stats.frames == 2


def test_empty_stream():
    scanner = Pms5003Scanner()
    assert list(resync([], scanner)) == []
    assert scanner.stats.frames == scanner.stats.skipped_octets == 0


def test_frame_split_across_chunks():
    raw = frame_bytes(pm10_atm=99)
    chunks = [raw[:5], raw[5:6], b"", raw[6:31], raw[31:]]
    assert [f.pm10_atm for f in resync(chunks)] == [99]


def test_truncated_frame_then_valid():
    scanner = Pms5003Scanner()
    assert scanner.feed(frame_bytes(pm2_5_atm=5)[:16]) == []
    assert scanner.pending == 16
    out = scanner.feed(frame_bytes(pm2_5_atm=6))
    assert [f.pm2_5_atm for f in out] == [6]


@given(st.binary(max_size=64), pms_frames)
def test_resync_liveness(prefix, frame):
    # the first valid frame after any garbage is found within prefix + 32 octets
    scanner = Pms5003Scanner()
    stream = prefix + pms5003_encode(frame)
    found = []
    for i in range(len(stream)):
        found += scanner.feed(stream[i : i + 1])
        if frame in found:
            break
    assert frame in found
    assert i + 1 <= len(prefix) + 32


# --- DHT11 ------------------------------------------------------------------

def test_dht11_table_row():
    frame = dht11_decode(bytes([62, 0, 29, 0, 91]))
    assert frame.humidity == 62.0 and frame.temperature == 29.0
    assert frame.checksum == 91


def test_dht11_bad_checksum():
    with pytest.raises(BadChecksum):
        dht11_decode(bytes([62, 0, 29, 0, 90]))


def test_dht11_zero_frame_warns_but_decodes():
    with pytest.warns(Dht11RangeWarning):
        frame = dht11_decode(bytes(5))
    assert frame.humidity == 0 and frame.temperature == 0


def test_dht11_in_range_no_warning():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        dht11_decode(bytes([45, 3, 21, 7, 76]))


def test_dht11_wrong_length():
    with pytest.raises(Truncated):
        dht11_decode(bytes(4))


def test_dht11_checksum_wraps():
    frame = Dht11Frame(200, 9, 60, 9)
    assert frame.checksum == (200 + 9 + 60 + 9) & 0xFF


def test_dht11_from_values_decimals():
    frame = Dht11Frame.from_values(humidity=61.4, temperature=28.7)
    assert (frame.humidity_int, frame.humidity_dec, frame.temp_int, frame.temp_dec) == (61, 4, 28, 7)
    assert dht11_decode(dht11_encode(frame)).temperature == pytest.approx(28.7)


def test_dht11_inconsistent_checksum_rejected():
    with pytest.raises(ValueError):
        Dht11Frame(62, 0, 29, 0, 90)


@given(st.integers(0, 100), st.integers(0, 9), st.integers(0, 50), st.integers(0, 9))
def test_dht11_round_trip(h, hd, t, td):
    frame = Dht11Frame(h, hd, t, td)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", Dht11RangeWarning)
        assert dht11_decode(dht11_encode(frame)) == frame


# --- raw frames and capture dumps -----------------------------------------

def test_sensor_frame_invariants():
    SensorFrame(SensorKind.PMS5003, frame_bytes())
    SensorFrame(SensorKind.DHT11, bytes(5))
    with pytest.raises(ValueError):
        SensorFrame(SensorKind.PMS5003, bytes(32))
    with pytest.raises(ValueError):
        SensorFrame(SensorKind.DHT11, bytes(6))


def test_dump_round_trip(tmp_path):
    records = [
        DumpRecord(SensorKind.PMS5003, frame_bytes(pm2_5_atm=1)),
        DumpRecord(SensorKind.DHT11, bytes([62, 0, 29, 0, 91])),
        DumpRecord(SensorKind.ADC, b"\x01\x02"),
        DumpRecord(SensorKind.PMS5003, b""),
    ]
    path = tmp_path / "cap.bin"
    write_dump(path, records)
    assert read_dump(path) == records
    assert path.read_bytes()[:5] == b"\x01\x00\x00\x00\x20"


def test_dump_empty():
    assert decode_dump(b"") == []


def test_dump_unknown_kind_names_offset():
    data = encode_dump([DumpRecord(SensorKind.DHT11, bytes(5))]) + b"\x09\x00\x00\x00\x00"
    with pytest.raises(MalformedDump, match="offset 10") as err:
        decode_dump(data)
    assert err.value.offset == 10


@pytest.mark.parametrize("data", [b"\x01\x00", b"\x01\x00\x00\x00\x05abc"])
def test_dump_truncated(data):
    with pytest.raises(MalformedDump):
        decode_dump(data)
