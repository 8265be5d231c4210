"""Codec: frozen encodings, exhaustive round-trips, stream serialization."""

import numpy as np
import pytest

from gcnsim.pcoo import (
    EMPTY_ROW_PACKET,
    HEADER_BYTES,
    IDLE_PACKET,
    PcooPacket,
    StreamFormatError,
    decode_packet,
    deserialize_stream,
    encode_packet,
    log2_exact,
    make_header,
    packet_malformed,
    packet_width,
    serialize_stream,
    stream_bits,
)


def random_packet(rng, t, h):
    if rng.random() < 0.3:
        return EMPTY_ROW_PACKET if rng.random() < 0.5 else IDLE_PACKET
    if h == 0:
        value = 1
    else:
        value = int(rng.integers(-(1 << (h - 1)), 1 << (h - 1)))
    return PcooPacket(int(rng.integers(0, 2)), int(rng.integers(0, 2)), 1,
                      int(rng.integers(0, t)), value)


def test_packet_width():
    assert packet_width(8, 0) == 6
    assert packet_width(8, 4) == 10
    assert packet_width(512, 16) == 28
    with pytest.raises(ValueError):
        packet_width(12, 4)
    with pytest.raises(ValueError):
        log2_exact(0)


def test_encode_known_values():
    # row with nonzeros at columns 1 and 5, tile width 8, no value field
    first = PcooPacket(sor=1, eor=0, vld=1, col=1, value=1)
    last = PcooPacket(sor=0, eor=1, vld=1, col=5, value=1)
    assert encode_packet(first, 8, 0) == 41
    assert encode_packet(last, 8, 0) == 29
    assert encode_packet(EMPTY_ROW_PACKET, 8, 0) == 48
    assert encode_packet(IDLE_PACKET, 8, 0) == 0
    # same header with a 4-bit value of 3 appended
    assert encode_packet(PcooPacket(1, 0, 1, 1, 3), 8, 4) == 659


def test_decode_known_values():
    assert decode_packet(0, 8, 0) == IDLE_PACKET
    assert decode_packet(48, 8, 0) == EMPTY_ROW_PACKET
    assert decode_packet(659, 8, 4) == PcooPacket(1, 0, 1, 1, 3)
    # sign extension of the value field
    assert decode_packet(encode_packet(PcooPacket(0, 0, 1, 2, -8), 8, 4), 8, 4).value == -8
    # implicit value 1 when no value field exists
    assert decode_packet(41, 8, 0).value == 1


def test_encode_errors():
    with pytest.raises(ValueError):
        encode_packet(PcooPacket(0, 0, 1, 8, 1), 8, 0)   # col out of range
    with pytest.raises(ValueError):
        encode_packet(PcooPacket(0, 0, 1, 0, 8), 8, 4)   # value too wide
    with pytest.raises(ValueError):
        encode_packet(PcooPacket(0, 0, 1, 0, -9), 8, 4)
    with pytest.raises(ValueError):
        encode_packet(PcooPacket(0, 0, 1, 0, 0), 8, 0)   # H=0 valid must carry 1
    with pytest.raises(ValueError):
        decode_packet(1 << 10, 8, 4)


def test_roundtrip_exhaustive():
    # every bit pattern decodes, and re-encodes to the same pattern
    for t, h in ((8, 4), (8, 0)):
        for code in range(1 << packet_width(t, h)):
            p = decode_packet(code, t, h)
            assert encode_packet(p, t, h) == code


def test_roundtrip_random_wide():
    rng = np.random.default_rng(53)
    for t, h in ((512, 0), (512, 4), (512, 16), (1024, 16)):
        for _ in range(300):
            p = random_packet(rng, t, h)
            assert decode_packet(encode_packet(p, t, h), t, h) == p


def test_malformed_flag():
    assert not packet_malformed(IDLE_PACKET)
    assert not packet_malformed(EMPTY_ROW_PACKET)
    assert packet_malformed(PcooPacket(0, 0, 0, 3, 0))
    assert packet_malformed(PcooPacket(1, 1, 0, 0, 2))
    assert not packet_malformed(PcooPacket(0, 0, 1, 3, -1))


def test_stream_bits_exact():
    # 5 nonzeros + 2 pad slots at T=8, H=4: (5+2) * 10 bits
    assert stream_bits(7, 8, 4) == 70
    assert stream_bits(0, 512, 16) == 0


def test_serialize_empty():
    header = make_header(8, 0, 4, 0)
    data = serialize_stream([], header)
    assert len(data) == HEADER_BYTES == 16
    assert data[:4] == b"PCOO"
    back_header, grid = deserialize_stream(data)
    assert back_header == header
    assert grid == []


def test_serialize_single_cycle_size():
    grid = [[PcooPacket(1, 1, 1, 3, 1), IDLE_PACKET]]
    data = serialize_stream(grid, make_header(8, 0, 2, 1))
    assert len(data) == 18  # 16 header + 2 packets at 1 byte each
    _, back = deserialize_stream(data)
    assert back == grid


def test_serialize_roundtrip_random():
    rng = np.random.default_rng(59)
    for _ in range(100):
        t = int(2 ** rng.integers(2, 10))
        h = int(rng.choice([0, 4, 16]))
        k = int(rng.integers(1, 9))
        cycles = int(rng.integers(0, 12))
        grid = [[random_packet(rng, t, h) for _ in range(k)] for _ in range(cycles)]
        data = serialize_stream(grid, make_header(t, h, k, cycles))
        header, back = deserialize_stream(data)
        assert (header.tile_width, header.value_bits, header.pe_count) == (t, h, k)
        assert back == grid


def test_deserialize_errors():
    good = serialize_stream([[IDLE_PACKET]], make_header(8, 0, 1, 1))
    with pytest.raises(StreamFormatError):
        deserialize_stream(b"NOPE" + good[4:])
    with pytest.raises(StreamFormatError):
        deserialize_stream(good[:-1])
    with pytest.raises(StreamFormatError):
        deserialize_stream(good[:10])
    bad_version = bytearray(good)
    bad_version[4] = 9
    with pytest.raises(StreamFormatError):
        deserialize_stream(bytes(bad_version))
    with pytest.raises(ValueError):
        serialize_stream([[IDLE_PACKET], [IDLE_PACKET]], make_header(8, 0, 1, 1))
    with pytest.raises(ValueError):
        serialize_stream([[IDLE_PACKET, IDLE_PACKET]], make_header(8, 0, 1, 1))
