"""Synthetic BCG recordings with known ground truth.

Per channel the signal is::

    tilt step (X axes, while occupied)
    + axis_gain * (heartbeat pulses + respiration)   (while occupied)
    + gravity (LIS3DHH Z)
    + white Gaussian noise, sigma = density * sqrt(fs / 2)

A heartbeat is a Gaussian-windowed tone at ``heart_pulse_carrier_hz``. A
breath is the slow respiration sinusoid plus a Gaussian-windowed tone at
``resp_pulse_carrier_hz``: the |CWT| of a pure sinusoid is flat in time, so
without the burst there would be nothing breath-synchronous for a
fixed-frequency modulus trace to peak on.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterator

import numpy as np

from .codec import SAMPLES_PER_PACKET, SamplePacket, Sca10hFrame
from .types import (
    ALL_CHANNELS,
    SAMPLE_RATE_HZ,
    SENSOR_SPECS,
    AccelSeries,
    Axis,
    Sensor,
    SensorChannel,
    channels_of,
    mg_to_raw,
)
from .vitals import HEART_RANGE_BPM, RESP_RANGE_BPM

AXIS_GAIN = {Axis.X: 1.0, Axis.Y: 0.6, Axis.Z: 0.8}
JITTER_CLIP_SIGMAS = 3.0


@dataclass(frozen=True)
class SynthParams:
    heart_rate_bpm: float = 70.0
    resp_rate_bpm: float = 15.0
    heart_pulse_carrier_hz: float = 3.5
    heart_pulse_width_s: float = 0.12  # Gaussian sigma of one beat
    heart_amp_mg: float = 2.0
    resp_amp_mg: float = 0.5
    resp_pulse_carrier_hz: float = 0.8
    resp_pulse_width_s: float = 1.0  # Gaussian sigma of one breath burst
    tilt_step_mg: float = 50.0
    # None -> Table I density of each sensor
    noise_density_ug_per_rthz: float | None = None
    hr_jitter_pct: float = 3.0
    gravity_mg: float = 1000.0
    # (start_s, stop_s) occupied spans; None -> occupied for the whole recording
    occupied_intervals_s: tuple[tuple[float, float], ...] | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("heart_amp_mg", "resp_amp_mg", "tilt_step_mg", "hr_jitter_pct"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not HEART_RANGE_BPM[0] <= self.heart_rate_bpm <= HEART_RANGE_BPM[1]:
            raise ValueError(f"heart_rate_bpm must be within {HEART_RANGE_BPM}")
        if not RESP_RANGE_BPM[0] <= self.resp_rate_bpm <= RESP_RANGE_BPM[1]:
            raise ValueError(f"resp_rate_bpm must be within {RESP_RANGE_BPM}")
        if self.heart_pulse_width_s <= 0 or self.resp_pulse_width_s <= 0:
            raise ValueError("pulse widths must be positive")
        if self.noise_density_ug_per_rthz is not None and self.noise_density_ug_per_rthz < 0:
            raise ValueError("noise density must be non-negative")
        if self.occupied_intervals_s is not None:
            spans = tuple((float(a), float(b)) for a, b in self.occupied_intervals_s)
            if any(b <= a for a, b in spans):
                raise ValueError("occupied intervals must have start < stop")
            object.__setattr__(self, "occupied_intervals_s", spans)

    def noise_sigma_mg(self, sensor: Sensor) -> float:
        density = self.noise_density_ug_per_rthz
        if density is None:
            density = SENSOR_SPECS[sensor].noise_density_ug_per_rthz
        return density * 1e-3 * np.sqrt(SAMPLE_RATE_HZ / 2)


@dataclass(frozen=True, eq=False)
class SynthTruth:
    beat_times_s: np.ndarray
    breath_times_s: np.ndarray
    occupied_intervals_s: tuple[tuple[float, float], ...]
    heart_rate_bpm: float
    resp_rate_bpm: float

    def occupied_at(self, t_s) -> np.ndarray | bool:
        t = np.asarray(t_s, dtype=np.float64)
        occ = np.zeros(t.shape, dtype=bool)
        for a, b in self.occupied_intervals_s:
            occ |= (t >= a) & (t < b)
        return bool(occ) if occ.ndim == 0 else occ


@dataclass(frozen=True, eq=False)
class SynthRecording:
    channels: dict[SensorChannel, AccelSeries]
    truth: SynthTruth

    def __getitem__(self, channel: SensorChannel | str) -> AccelSeries:
        if isinstance(channel, str):
            channel = SensorChannel.parse(channel)
        return self.channels[channel]


def beat_times(rate_bpm: float, duration_s: float, jitter_pct: float,
               rng: np.random.Generator) -> np.ndarray:
    """Event times with multiplicative interval jitter.

    The jitter draws are centred so the mean interval is exactly
    ``60 / rate_bpm`` and the count over the record does not drift.
    """
    period = 60.0 / rate_bpm
    n = int(np.ceil(duration_s / period)) + 2
    u = np.clip(rng.standard_normal(n), -JITTER_CLIP_SIGMAS, JITTER_CLIP_SIGMAS)
    if jitter_pct == 0:
        u[:] = 0.0
    u -= u.mean()
    intervals = period * (1.0 + jitter_pct / 100.0 * u)
    times = 0.5 * period + np.concatenate([[0.0], np.cumsum(intervals[:-1])])
    return times[times < duration_s]


def _add_pulses(out: np.ndarray, t: np.ndarray, centers: np.ndarray, amp: float,
                carrier_hz: float, width_s: float) -> None:
    half = 5.0 * width_s
    for c in centers:
        lo = max(0, int(np.floor((c - half) * SAMPLE_RATE_HZ)))
        hi = min(t.size, int(np.ceil((c + half) * SAMPLE_RATE_HZ)) + 1)
        if lo >= hi:
            continue
        u = t[lo:hi] - c
        out[lo:hi] += amp * np.exp(-0.5 * (u / width_s) ** 2) * np.sin(2 * np.pi * carrier_hz * u)


def generate_bcg(params: SynthParams, duration_s: float, t0_ms: int = 0) -> SynthRecording:
    """Render all five accelerometer channels plus the ground truth."""
    if duration_s <= 0:
        raise ValueError("duration_s must be positive")
    n = int(round(duration_s * SAMPLE_RATE_HZ))
    t = np.arange(n) / SAMPLE_RATE_HZ
    rng = np.random.default_rng(params.seed)

    spans = params.occupied_intervals_s
    if spans is None:
        spans = ((0.0, float(duration_s)),)
    occ_mask = np.zeros(n, dtype=bool)
    for a, b in spans:
        occ_mask |= (t >= a) & (t < b)

    def occupied(times: np.ndarray) -> np.ndarray:
        keep = np.zeros(times.shape, dtype=bool)
        for a, b in spans:
            keep |= (times >= a) & (times < b)
        return keep

    beats = beat_times(params.heart_rate_bpm, duration_s, params.hr_jitter_pct, rng)
    beats = beats[occupied(beats)]
    resp_period = 60.0 / params.resp_rate_bpm
    first_breath = 0.25 * resp_period
    breaths = np.arange(first_breath, duration_s, resp_period)
    breaths = breaths[occupied(breaths)]

    vitals = np.zeros(n)
    _add_pulses(vitals, t, beats, params.heart_amp_mg, params.heart_pulse_carrier_hz,
                params.heart_pulse_width_s)
    resp = params.resp_amp_mg * np.cos(2 * np.pi * (t - first_breath) / resp_period)
    _add_pulses(resp, t, breaths, params.resp_amp_mg, params.resp_pulse_carrier_hz,
                params.resp_pulse_width_s)
    vitals += resp * occ_mask

    channels = {}
    for ch in ALL_CHANNELS:
        x = AXIS_GAIN[ch.axis] * vitals
        if ch.axis is Axis.X:
            x = x + params.tilt_step_mg * occ_mask
        if ch.sensor is Sensor.LIS3DHH and ch.axis is Axis.Z:
            x = x + params.gravity_mg
        sigma = params.noise_sigma_mg(ch.sensor)
        x = x + sigma * rng.standard_normal(n)
        channels[ch] = AccelSeries(ch, t0_ms, x)

    truth = SynthTruth(beats, breaths, tuple(spans), params.heart_rate_bpm, params.resp_rate_bpm)
    return SynthRecording(channels, truth)


def packets_from_recording(rec: SynthRecording, t0_ms: int = 0,
                           seq_start: int = 0) -> Iterator[SamplePacket]:
    """Slice a recording into 100-sample packets, quantized per sensor."""
    n = len(next(iter(rec.channels.values())))
    if n % SAMPLES_PER_PACKET:
        raise ValueError("recording length must be a whole number of seconds")
    raw = {}
    for sensor in (Sensor.SCA61T, Sensor.LIS3DHH):
        cols = [mg_to_raw(rec.channels[ch].values, SENSOR_SPECS[sensor])
                for ch in channels_of(sensor)]
        raw[sensor] = np.stack(cols, axis=1)
    truth = rec.truth
    hr = int(round(truth.heart_rate_bpm))
    rr = int(round(truth.resp_rate_bpm))
    b2b = int(round(60000.0 / truth.heart_rate_bpm))
    for k in range(n // SAMPLES_PER_PACKET):
        occ = truth.occupied_at(k + 0.5)
        frame = Sca10hFrame(
            seq=(seq_start + k) % (1 << 32),
            timestamp_ms=t0_ms + 1000 * k,
            heart_rate_bpm=hr if occ else 0,
            respiration_rate_bpm=rr if occ else 0,
            occupancy=int(occ),
            status=0,
            signal_strength=1000 if occ else 0,
            b2b_time_ms=(b2b, b2b, b2b) if occ else (0, 0, 0),
        )
        sl = slice(k * SAMPLES_PER_PACKET, (k + 1) * SAMPLES_PER_PACKET)
        yield SamplePacket(frame, raw[Sensor.SCA61T][sl], raw[Sensor.LIS3DHH][sl])


def generate_packets(params: SynthParams, duration_s: int, t0_ms: int = 0) -> Iterator[SamplePacket]:
    """Whole-second recording as a stream of packets with seq 0..duration-1."""
    if duration_s <= 0 or int(duration_s) != duration_s:
        raise ValueError("duration_s must be a positive whole number of seconds")
    rec = generate_bcg(params, int(duration_s), t0_ms)
    return packets_from_recording(rec, t0_ms)


def bedding_down_params(params: SynthParams, empty_s: float, total_s: float) -> SynthParams:
    """Same subject, but the furniture is empty for the first ``empty_s`` seconds."""
    return replace(params, occupied_intervals_s=((float(empty_s), float(total_s)),))

