"""Packet-level column-only coordinate codec and its byte-stream form.

A packet carries three flags (start-of-row, end-of-row, valid), a tile-local
column index, and an H-bit raw value, packed MSB to LSB in that order:
width = 3 + log2(T) + H bits for tile width T. Rows with no nonzeros are a
single packet with sor=eor=1 and an all-zero payload; an all-zero packet is
an idle (stall or pad) slot.

With H=0 the stream carries no values at all: a valid packet stands for a
stored 1, which is how binary adjacency matrices travel.
"""

from __future__ import annotations

import struct
from typing import NamedTuple

import numpy as np


class StreamFormatError(ValueError):
    """Malformed or truncated serialized stream."""


class PcooPacket(NamedTuple):
    sor: int
    eor: int
    vld: int
    col: int
    value: int


IDLE_PACKET = PcooPacket(0, 0, 0, 0, 0)
EMPTY_ROW_PACKET = PcooPacket(1, 1, 0, 0, 0)

STREAM_MAGIC = b"PCOO"
STREAM_VERSION = 1
_HEADER_STRUCT = struct.Struct("<4sHHHHI")  # magic, version, T, H, K, cycle_count
HEADER_BYTES = _HEADER_STRUCT.size


class StreamHeader(NamedTuple):
    tile_width: int
    value_bits: int
    pe_count: int
    cycle_count: int
    version: int = STREAM_VERSION


def log2_exact(t: int) -> int:
    if t < 1 or t & (t - 1):
        raise ValueError(f"tile width must be a power of two, got {t}")
    return t.bit_length() - 1


def packet_width(tile_width: int, value_bits: int) -> int:
    return 3 + log2_exact(tile_width) + value_bits


def encode_packet(p: PcooPacket, tile_width: int, value_bits: int) -> int:
    """Pack one packet into an unsigned integer of packet_width bits."""
    t = tile_width
    if not 0 <= p.col < t:
        raise ValueError(f"column {p.col} outside tile width {t}")
    if value_bits == 0:
        # no value field: a valid packet means a stored 1
        expect = 1 if p.vld else 0
        if p.value != expect:
            raise ValueError(f"value {p.value} not representable in 0 bits (vld={p.vld})")
        payload = 0
    else:
        lo = -(1 << (value_bits - 1))
        hi = (1 << (value_bits - 1)) - 1
        if not lo <= p.value <= hi:
            raise ValueError(f"value {p.value} outside {value_bits}-bit range")
        payload = p.value & ((1 << value_bits) - 1)
    head = p.col + t * p.vld + 2 * t * p.eor + 4 * t * p.sor
    return (head << value_bits) | payload


def decode_packet(bits: int, tile_width: int, value_bits: int) -> PcooPacket:
    """Inverse of encode_packet; the value is sign-extended from its field."""
    width = packet_width(tile_width, value_bits)
    if not 0 <= bits < (1 << width):
        raise ValueError(f"code {bits} wider than {width} bits")
    tbits = log2_exact(tile_width)
    head = bits >> value_bits
    col = head & (tile_width - 1)
    vld = (head >> tbits) & 1
    eor = (head >> (tbits + 1)) & 1
    sor = (head >> (tbits + 2)) & 1
    if value_bits == 0:
        value = 1 if vld else 0
    else:
        payload = bits & ((1 << value_bits) - 1)
        if payload >= 1 << (value_bits - 1):
            payload -= 1 << value_bits
        value = payload
    return PcooPacket(sor, eor, vld, col, value)


def packet_malformed(p: PcooPacket) -> bool:
    """True for invalid packets that still carry payload bits (vld=0, col or value set)."""
    if p.vld:
        return False
    return p.col != 0 or p.value != 0


def stream_bits(slot_count: int, tile_width: int, value_bits: int) -> int:
    """Exact compressed size of slot_count packets, idles included."""
    return slot_count * packet_width(tile_width, value_bits)


def make_header(tile_width: int, value_bits: int, pe_count: int,
                cycle_count: int) -> StreamHeader:
    log2_exact(tile_width)
    if pe_count <= 0:
        raise ValueError("pe_count must be positive")
    if cycle_count < 0:
        raise ValueError("cycle_count must be non-negative")
    return StreamHeader(tile_width, value_bits, pe_count, cycle_count)


def _serialize_columnar(sched, header: StreamHeader, prefix: bytes) -> bytes:
    """Vectorized body encoder for schedules that expose flag/col/value arrays."""
    t, h = header.tile_width, header.value_bits
    cycles, k = sched.sor.shape
    if cycles != header.cycle_count:
        raise ValueError(f"header says {header.cycle_count} cycles, got {cycles}")
    if k != header.pe_count:
        raise ValueError(f"header says {header.pe_count} PEs, schedule has {k}")
    col = sched.col.astype(np.int64).ravel()
    val = sched.value.astype(np.int64).ravel()
    vld = sched.vld.astype(np.int64).ravel()
    if col.size and (col.min() < 0 or col.max() >= t):
        raise ValueError(f"column outside tile width {t}")
    if h == 0:
        if not np.array_equal(val, vld):
            raise ValueError("value not representable in 0 bits")
        payload = np.zeros_like(val)
    else:
        lo, hi = -(1 << (h - 1)), (1 << (h - 1)) - 1
        if val.size and (val.min() < lo or val.max() > hi):
            raise ValueError(f"value outside {h}-bit range")
        payload = val & ((1 << h) - 1)
    head = col + t * vld + 2 * t * sched.eor.astype(np.int64).ravel() \
        + 4 * t * sched.sor.astype(np.int64).ravel()
    codes = (head << h) | payload
    nbytes = (packet_width(t, h) + 7) // 8
    shifts = 8 * np.arange(nbytes - 1, -1, -1, dtype=np.int64)
    body = ((codes[:, None] >> shifts) & 0xFF).astype(np.uint8)
    return prefix + body.tobytes()


def serialize_stream(schedule, header: StreamHeader) -> bytes:
    """Header then packets cycle-major, each MSB-first in ceil(width/8) bytes.

    Accepts a TileSchedule (anything with to_packets()) or a plain grid:
    a sequence of cycles, each a sequence of pe_count packets.
    """
    prefix = _HEADER_STRUCT.pack(STREAM_MAGIC, header.version,
                                 header.tile_width, header.value_bits,
                                 header.pe_count, header.cycle_count)
    if hasattr(schedule, "sor"):
        return _serialize_columnar(schedule, header, prefix)
    packets = schedule.to_packets() if hasattr(schedule, "to_packets") else schedule
    if len(packets) != header.cycle_count:
        raise ValueError(f"header says {header.cycle_count} cycles, got {len(packets)}")
    nbytes = (packet_width(header.tile_width, header.value_bits) + 7) // 8
    out = bytearray(prefix)
    for cycle in packets:
        if len(cycle) != header.pe_count:
            raise ValueError("schedule is not rectangular")
        for p in cycle:
            code = encode_packet(p, header.tile_width, header.value_bits)
            out += code.to_bytes(nbytes, "big")
    return bytes(out)


def deserialize_stream(data: bytes) -> tuple[StreamHeader, list[list[PcooPacket]]]:
    """Inverse of serialize_stream; returns the header and the packet grid."""
    if len(data) < HEADER_BYTES:
        raise StreamFormatError("truncated header")
    magic, version, t, h, k, cycles = _HEADER_STRUCT.unpack_from(data)
    if magic != STREAM_MAGIC:
        raise StreamFormatError(f"bad magic {magic!r}")
    if version != STREAM_VERSION:
        raise StreamFormatError(f"unsupported stream version {version}")
    header = StreamHeader(t, h, k, cycles, version)
    nbytes = (packet_width(t, h) + 7) // 8
    expect = HEADER_BYTES + cycles * k * nbytes
    if len(data) != expect:
        raise StreamFormatError(f"payload is {len(data)} bytes, expected {expect}")
    grid = []
    pos = HEADER_BYTES
    for _ in range(cycles):
        row = []
        for _ in range(k):
            code = int.from_bytes(data[pos:pos + nbytes], "big")
            row.append(decode_packet(code, t, h))
            pos += nbytes
        grid.append(row)
    return header, grid
