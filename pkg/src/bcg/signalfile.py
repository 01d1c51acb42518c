"""Signal files: CSV (``t_ms,sensor,axis,mg``) or ``.bcg`` packet dumps."""

from __future__ import annotations

import csv
import os
from collections import defaultdict
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import numpy as np

from .codec import PACKET_SIZE, PacketError, SamplePacket, encode, iter_packets
from .pipeline import SecondBlock, block_from_packet
from .types import (
    SAMPLE_PERIOD_MS,
    SENSOR_SPECS,
    AccelSeries,
    Sensor,
    SensorChannel,
    channels_of,
    raw_to_mg,
)

CSV_HEADER = ["t_ms", "sensor", "axis", "mg"]
SAMPLES_PER_BLOCK = 100


class SignalFileError(ValueError):
    pass


def is_packet_dump(path: str | os.PathLike) -> bool:
    return Path(path).suffix.lower() == ".bcg"


def read_packets(path: str | os.PathLike) -> list[SamplePacket]:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise SignalFileError(f"cannot read {path}: {exc}") from exc
    try:
        return list(iter_packets(data))
    except PacketError as exc:
        raise SignalFileError(f"{path}: {exc}") from exc


def write_packets(path: str | os.PathLike, packets: Iterable[SamplePacket]) -> int:
    n = 0
    with open(path, "wb") as fh:
        for p in packets:
            fh.write(encode(p))
            n += 1
    return n


def read_csv(path: str | os.PathLike) -> dict[SensorChannel, AccelSeries]:
    rows: dict[SensorChannel, list[tuple[int, float]]] = defaultdict(list)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise SignalFileError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != CSV_HEADER:
            raise SignalFileError(f"{path}: expected header {','.join(CSV_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                t_ms, sensor, axis, mg = row
                ch = SensorChannel(Sensor(sensor.strip().upper()), axis.strip().upper())
                rows[ch].append((int(t_ms), float(mg)))
            except (ValueError, TypeError) as exc:
                raise SignalFileError(f"{path}:{lineno}: bad row {row!r}: {exc}") from exc
    if not rows:
        raise SignalFileError(f"{path}: no samples")
    out = {}
    for ch, samples in rows.items():
        t = np.array([s[0] for s in samples], dtype=np.int64)
        if np.any(np.diff(t) <= 0):
            raise SignalFileError(f"{path}: {ch} rows are not time-sorted")
        if np.any(np.diff(t) != SAMPLE_PERIOD_MS):
            raise SignalFileError(f"{path}: {ch} is not gap-free at 100 Hz")
        out[ch] = AccelSeries(ch, int(t[0]), np.array([s[1] for s in samples]))
    return out


def write_csv(path: str | os.PathLike, channels: Mapping[SensorChannel, AccelSeries]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for ch, series in channels.items():
            for t, v in zip(series.times_ms.tolist(), series.values.tolist()):
                writer.writerow([t, ch.sensor.value, ch.axis.value, repr(v)])


def channels_from_packets(packets: list[SamplePacket]) -> dict[SensorChannel, AccelSeries]:
    if not packets:
        raise SignalFileError("no packets")
    t0 = packets[0].sca10h.timestamp_ms
    out = {}
    for sensor, attr in ((Sensor.SCA61T, "sca61t"), (Sensor.LIS3DHH, "lis3dhh")):
        raw = np.concatenate([getattr(p, attr) for p in packets])
        mg = raw_to_mg(raw, SENSOR_SPECS[sensor])
        for col, ch in enumerate(channels_of(sensor)):
            out[ch] = AccelSeries(ch, t0, mg[:, col])
    return out


def blocks_from_channels(channels: Mapping[SensorChannel, AccelSeries]) -> Iterator[SecondBlock]:
    """Cut aligned channels into one-second blocks (a partial last second is dropped)."""
    series = list(channels.values())
    t0, n = series[0].t0_ms, len(series[0])
    if any(s.t0_ms != t0 or len(s) != n for s in series):
        raise SignalFileError("channels must share start time and length")
    for k in range(n // SAMPLES_PER_BLOCK):
        sl = slice(k * SAMPLES_PER_BLOCK, (k + 1) * SAMPLES_PER_BLOCK)
        yield SecondBlock(t0 + 1000 * k, k, {ch: s.values[sl] for ch, s in channels.items()})


def read_blocks(path: str | os.PathLike) -> list[SecondBlock]:
    """Load any signal file as one-second blocks."""
    if is_packet_dump(path):
        try:
            return [block_from_packet(p) for p in read_packets(path)]
        except SignalFileError:
            raise
        except ValueError as exc:
            raise SignalFileError(f"{path}: {exc}") from exc
    return list(blocks_from_channels(read_csv(path)))


def read_channels(path: str | os.PathLike) -> dict[SensorChannel, AccelSeries]:
    if is_packet_dump(path):
        try:
            return channels_from_packets(read_packets(path))
        except SignalFileError:
            raise
        except ValueError as exc:
            raise SignalFileError(f"{path}: {exc}") from exc
    return read_csv(path)


__all__ = [
    "CSV_HEADER",
    "PACKET_SIZE",
    "SignalFileError",
    "read_blocks",
    "read_channels",
    "read_csv",
    "read_packets",
    "write_csv",
    "write_packets",
    "blocks_from_channels",
    "channels_from_packets",
    "is_packet_dump",
]
