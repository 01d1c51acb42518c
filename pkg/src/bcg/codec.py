"""Encoder/decoder for the fixed 1046-byte per-second sensor packet.

Layout (all little-endian)::

    offset  size  content
    0       46    SCA10H frame (see Sca10hFrame)
    46      400   SCA61T, 100 samples x (x, y) i16, interleaved per sample
    446     600   LIS3DHH, 100 samples x (x, y, z) i16, interleaved per sample
    1046          end

See docs/wire-format.md for the frame field offsets.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

SAMPLES_PER_PACKET = 100
FRAME_SIZE = 46
SCA61T_AXES = 2
LIS3DHH_AXES = 3
SCA61T_OFFSET = FRAME_SIZE
LIS3DHH_OFFSET = SCA61T_OFFSET + SAMPLES_PER_PACKET * SCA61T_AXES * 2
PACKET_SIZE = LIS3DHH_OFFSET + SAMPLES_PER_PACKET * LIS3DHH_AXES * 2

# seq, timestamp_ms, heart, resp, occupancy, status, signal_strength,
# b2b x3, hrv, stroke_volume, 14 reserved bytes
_FRAME = struct.Struct("<IQHHBBI3HHH14x")
assert _FRAME.size == FRAME_SIZE
assert PACKET_SIZE == 1046

_I16 = np.dtype("<i2")


class PacketError(ValueError):
    """Base class for undecodable input."""


class WrongLength(PacketError):
    def __init__(self, actual: int):
        self.actual = actual
        super().__init__(f"packet must be {PACKET_SIZE} bytes, got {actual}")


class MalformedFrame(PacketError):
    pass


class TruncatedDump(PacketError):
    def __init__(self, total: int):
        self.total = total
        self.trailing = total % PACKET_SIZE
        super().__init__(
            f"packet dump of {total} bytes is not a multiple of {PACKET_SIZE} "
            f"({self.trailing} trailing bytes, partial packet)"
        )


def _check_uint(name: str, value: int, bits: int) -> None:
    if not isinstance(value, (int, np.integer)) or isinstance(value, bool):
        raise TypeError(f"{name} must be an integer")
    if not 0 <= value < (1 << bits):
        raise ValueError(f"{name}={value} does not fit u{bits}")


@dataclass(frozen=True)
class Sca10hFrame:
    """Vitals summary of the reference BCG module, one per packet."""

    seq: int = 0
    timestamp_ms: int = 0
    heart_rate_bpm: int = 0
    respiration_rate_bpm: int = 0
    occupancy: int = 0
    status: int = 0
    signal_strength: int = 0
    b2b_time_ms: tuple[int, int, int] = (0, 0, 0)
    hrv_ms: int = 0
    stroke_volume: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "b2b_time_ms", tuple(int(v) for v in self.b2b_time_ms))
        if len(self.b2b_time_ms) != 3:
            raise ValueError("b2b_time_ms needs exactly 3 entries")
        _check_uint("seq", self.seq, 32)
        _check_uint("timestamp_ms", self.timestamp_ms, 64)
        _check_uint("heart_rate_bpm", self.heart_rate_bpm, 16)
        _check_uint("respiration_rate_bpm", self.respiration_rate_bpm, 16)
        _check_uint("status", self.status, 8)
        _check_uint("signal_strength", self.signal_strength, 32)
        for v in self.b2b_time_ms:
            _check_uint("b2b_time_ms", v, 16)
        _check_uint("hrv_ms", self.hrv_ms, 16)
        _check_uint("stroke_volume", self.stroke_volume, 16)
        if self.occupancy not in (0, 1):
            raise MalformedFrame(f"occupancy must be 0 or 1, got {self.occupancy}")

    def pack(self) -> bytes:
        return _FRAME.pack(
            self.seq,
            self.timestamp_ms,
            self.heart_rate_bpm,
            self.respiration_rate_bpm,
            self.occupancy,
            self.status,
            self.signal_strength,
            *self.b2b_time_ms,
            self.hrv_ms,
            self.stroke_volume,
        )

    @classmethod
    def unpack(cls, buf: bytes) -> "Sca10hFrame":
        if len(buf) != FRAME_SIZE:
            raise WrongLength(len(buf))
        (seq, ts, hr, rr, occ, status, strength, b0, b1, b2, hrv, sv) = _FRAME.unpack(buf)
        if occ not in (0, 1):
            raise MalformedFrame(f"occupancy byte must be 0 or 1, got {occ}")
        return cls(seq, ts, hr, rr, occ, status, strength, (b0, b1, b2), hrv, sv)


def _as_samples(name: str, data, axes: int) -> np.ndarray:
    arr = np.asarray(data)
    if arr.shape != (SAMPLES_PER_PACKET, axes):
        raise ValueError(f"{name} must have shape ({SAMPLES_PER_PACKET}, {axes}), got {arr.shape}")
    if arr.dtype.kind not in "iu":
        if not np.all(np.mod(arr, 1) == 0):
            raise ValueError(f"{name} samples must be integers")
    if arr.size and (arr.min() < -32768 or arr.max() > 32767):
        raise ValueError(f"{name} samples must fit i16")
    out = arr.astype(np.int16)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class SamplePacket:
    """One second of data: the SCA10H frame plus raw accelerometer samples.

    ``sca61t`` has shape (100, 2) and ``lis3dhh`` shape (100, 3), both raw
    i16 LSB counts; columns are axes in X, Y(, Z) order.
    """

    sca10h: Sca10hFrame
    sca61t: np.ndarray
    lis3dhh: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "sca61t", _as_samples("sca61t", self.sca61t, SCA61T_AXES))
        object.__setattr__(self, "lis3dhh", _as_samples("lis3dhh", self.lis3dhh, LIS3DHH_AXES))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SamplePacket):
            return NotImplemented
        return (
            self.sca10h == other.sca10h
            and np.array_equal(self.sca61t, other.sca61t)
            and np.array_equal(self.lis3dhh, other.lis3dhh)
        )

    @classmethod
    def zeros(cls) -> "SamplePacket":
        return cls(
            Sca10hFrame(),
            np.zeros((SAMPLES_PER_PACKET, SCA61T_AXES), dtype=np.int16),
            np.zeros((SAMPLES_PER_PACKET, LIS3DHH_AXES), dtype=np.int16),
        )


def encode(packet: SamplePacket) -> bytes:
    out = b"".join(
        (
            packet.sca10h.pack(),
            packet.sca61t.astype(_I16, copy=False).tobytes(),
            packet.lis3dhh.astype(_I16, copy=False).tobytes(),
        )
    )
    assert len(out) == PACKET_SIZE
    return out


def decode(data: bytes) -> SamplePacket:
    """Decode exactly one packet.

    Raises
    ------
    WrongLength
        If ``data`` is not exactly 1046 bytes.
    MalformedFrame
        If the SCA10H occupancy byte is not 0 or 1.
    """
    if not isinstance(data, (bytes, bytearray, memoryview)):
        raise TypeError("decode expects a bytes-like object")
    data = bytes(data)
    if len(data) != PACKET_SIZE:
        raise WrongLength(len(data))
    frame = Sca10hFrame.unpack(data[:FRAME_SIZE])
    sca = np.frombuffer(data, dtype=_I16, count=SAMPLES_PER_PACKET * SCA61T_AXES,
                        offset=SCA61T_OFFSET)
    lis = np.frombuffer(data, dtype=_I16, count=SAMPLES_PER_PACKET * LIS3DHH_AXES,
                        offset=LIS3DHH_OFFSET)
    return SamplePacket(
        frame,
        sca.reshape(SAMPLES_PER_PACKET, SCA61T_AXES),
        lis.reshape(SAMPLES_PER_PACKET, LIS3DHH_AXES),
    )


def iter_packets(data: bytes):
    """Decode a concatenated packet dump; the length must be a multiple of 1046."""
    if len(data) % PACKET_SIZE:
        raise TruncatedDump(len(data))
    for off in range(0, len(data), PACKET_SIZE):
        yield decode(data[off:off + PACKET_SIZE])


def min_bitrate_bps(packet_size_bytes: int, period_s: float) -> float:
    """Bits per second needed to ship one packet every ``period_s``."""
    if period_s <= 0:
        raise ValueError("period_s must be positive")
    if packet_size_bytes < 0:
        raise ValueError("packet_size_bytes must be non-negative")
    return packet_size_bytes * 8 / period_s
