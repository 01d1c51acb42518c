"""Per-stream processing shared by the ingest server and offline analysis.

Both paths feed the same :class:`StreamPipeline` one second at a time, which
is what makes their outputs identical for the same packet stream.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .codec import SamplePacket, Sca10hFrame
from .occupancy import OccupancyConfig, OccupancyTracker
from .types import (
    SENSOR_SPECS,
    AnalysisConfig,
    Sensor,
    SensorChannel,
    channels_of,
    raw_to_mg,
)
from .vitals import PeakThreshold, VitalsEstimator

RATE_DECIMALS = 2


@dataclass(frozen=True, eq=False)
class SecondBlock:
    """One second of samples in milli-g, optionally with the SCA10H frame."""

    t_ms: int
    seq: int
    samples: Mapping[SensorChannel, np.ndarray]
    frame: Sca10hFrame | None = None


def block_from_packet(packet: SamplePacket) -> SecondBlock:
    samples = {}
    for sensor, raw in ((Sensor.SCA61T, packet.sca61t), (Sensor.LIS3DHH, packet.lis3dhh)):
        mg = raw_to_mg(raw, SENSOR_SPECS[sensor])
        for col, ch in enumerate(channels_of(sensor)):
            samples[ch] = mg[:, col]
    frame = packet.sca10h
    return SecondBlock(frame.timestamp_ms, frame.seq, samples, frame)


@dataclass(frozen=True)
class Calibration:
    sensor_id: str
    occupancy: OccupancyConfig | None = None
    peak_thresholds: Mapping[str, PeakThreshold] = field(default_factory=dict)
    vitals_channel: SensorChannel | None = None

    def to_dict(self) -> dict:
        return {
            "sensor_id": self.sensor_id,
            "occupancy": self.occupancy.to_dict() if self.occupancy else None,
            "peak_thresholds": {k: v.to_dict() for k, v in self.peak_thresholds.items()},
            "vitals_channel": str(self.vitals_channel) if self.vitals_channel else None,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "Calibration":
        occ = data.get("occupancy")
        ch = data.get("vitals_channel")
        return cls(
            sensor_id=str(data["sensor_id"]),
            occupancy=OccupancyConfig.from_dict(occ) if occ else None,
            peak_thresholds={k: PeakThreshold.from_dict(v)
                             for k, v in (data.get("peak_thresholds") or {}).items()},
            vitals_channel=SensorChannel.parse(ch) if ch else None,
        )


def load_calibrations(path: str | os.PathLike) -> dict[str, Calibration]:
    """Read a calibration file: JSON lines, a JSON list, or a single object."""
    text = Path(path).read_text()
    stripped = text.strip()
    if not stripped:
        return {}
    try:
        data = json.loads(stripped)
        entries = data if isinstance(data, list) else [data]
    except json.JSONDecodeError:
        entries = [json.loads(line) for line in stripped.splitlines() if line.strip()]
    cals = [Calibration.from_dict(e) for e in entries]
    return {c.sensor_id: c for c in cals}


def save_calibration(path: str | os.PathLike, cal: Calibration) -> None:
    """Insert or replace one sensor's entry, keeping the others."""
    path = Path(path)
    existing = load_calibrations(path) if path.exists() else {}
    existing[cal.sensor_id] = cal
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as fh:
        for c in existing.values():
            fh.write(json.dumps(c.to_dict()) + "\n")
    os.replace(tmp, path)


def _round(rate: float | None) -> float | None:
    return None if rate is None else round(rate, RATE_DECIMALS)


class StreamPipeline:
    """Occupancy gating and vitals for one sensor stream.

    Without an occupancy calibration the SCA10H frame's occupancy is passed
    through (or, for frameless input, the subject is assumed present) and
    records are flagged ``uncalibrated``. Missing peak thresholds are
    self-calibrated from the first rate window of the stream.

    Vitals only see occupied seconds, and the estimator restarts at every
    occupancy onset so that a rate window never spans an empty period;
    ``provisional`` means less than one window has passed since the onset.
    """

    def __init__(self, config: AnalysisConfig = AnalysisConfig(),
                 calibration: Calibration | None = None):
        self.config = config
        self.calibration = calibration
        cal = calibration or Calibration(sensor_id="")
        self.vitals_channel = cal.vitals_channel or config.vitals_channel
        self.vitals = VitalsEstimator(config, cal.peak_thresholds)
        self.occupancy = None
        if cal.occupancy is not None:
            occ_cfg = cal.occupancy
            if occ_cfg.debounce_s != config.occupancy_debounce_s:
                # calibration owns the level; debounce comes from the analysis config
                occ_cfg = OccupancyConfig(occ_cfg.axis, occ_cfg.baseline_mg, occ_cfg.threshold_mg,
                                          config.occupancy_debounce_s, occ_cfg.smoothing_window_s)
            self.occupancy = OccupancyTracker(occ_cfg)
        self._was_occupied = False

    @property
    def uncalibrated(self) -> bool:
        return self.occupancy is None

    def _restart_vitals(self) -> None:
        # keep thresholds learned so far; drop peaks and trace from before the onset
        learned = {name: band.threshold for name, band in
                   (("heart", self.vitals.heart), ("resp", self.vitals.resp))
                   if band.threshold is not None}
        self.vitals = VitalsEstimator(self.config, learned)

    def process(self, block: SecondBlock) -> dict:
        if self.vitals_channel not in block.samples:
            raise ValueError(f"input has no {self.vitals_channel} channel")
        if self.occupancy is not None:
            axis = self.occupancy.cfg.axis
            if axis not in block.samples:
                raise ValueError(f"input has no {axis} channel for occupancy")
            occupied = self.occupancy.update_block(block.samples[axis], block.t_ms).occupied
        elif block.frame is not None:
            occupied = bool(block.frame.occupancy)
        else:
            occupied = True
        record = {"t_ms": block.t_ms, "seq": block.seq, "occupied": occupied,
                  "heart_bpm": None, "resp_bpm": None, "provisional": True}
        if occupied:
            if not self._was_occupied:
                self._restart_vitals()
            est = self.vitals.push(block.samples[self.vitals_channel])
            record.update(heart_bpm=_round(est.heart_rate_bpm),
                          resp_bpm=_round(est.respiration_rate_bpm),
                          provisional=est.provisional)
        self._was_occupied = occupied
        if self.uncalibrated:
            record["uncalibrated"] = True
        return record


def vitals_row(record: Mapping) -> dict:
    """The external vitals record ``{t_ms, heart_bpm, resp_bpm, occupied}``."""
    return {k: record[k] for k in ("t_ms", "heart_bpm", "resp_bpm", "occupied")}
