"""Heart and respiration rate from peaks of |CWT| traces.

Each band runs: |CWT| at a fixed frequency -> peaks above a calibrated
threshold -> 60 / mean inter-peak interval over the trailing minute.
"""

from __future__ import annotations

import bisect
import enum
import logging
import math
from dataclasses import dataclass
from typing import Iterator, Mapping

import numpy as np

from .cwt import MorletParams, StreamingCwt, cwt_row
from .types import SAMPLE_RATE_HZ, AccelSeries, AnalysisConfig, Sensor, SensorChannel

logger = logging.getLogger(__name__)

HEART_RANGE_BPM = (20.0, 250.0)
RESP_RANGE_BPM = (2.0, 60.0)
MIN_CALIBRATION_PEAKS = 20


class InsufficientPeaks(ValueError):
    def __init__(self, count: int, required: int = MIN_CALIBRATION_PEAKS):
        self.count = count
        self.required = required
        super().__init__(
            f"calibration trace has {count} local maxima, need at least {required}; "
            "record a longer calibration measurement"
        )


class ThresholdSource(enum.Enum):
    CALIBRATED = "calibrated"
    MANUAL = "manual"


@dataclass(frozen=True)
class PeakThreshold:
    value: float
    source: ThresholdSource = ThresholdSource.MANUAL

    def __post_init__(self) -> None:
        object.__setattr__(self, "source", ThresholdSource(self.source))
        if not self.value >= 0:
            raise ValueError("threshold must be non-negative")

    def to_dict(self) -> dict:
        return {"value": self.value, "source": self.source.value}

    @classmethod
    def from_dict(cls, data) -> "PeakThreshold":
        if isinstance(data, (int, float)):
            return cls(float(data), ThresholdSource.MANUAL)
        return cls(float(data["value"]), ThresholdSource(data.get("source", "manual")))


@dataclass(frozen=True, eq=False)
class PeakTrain:
    """Detected peaks; ``intervals_s[i]`` is the gap between peaks i and i+1."""

    peak_times_s: np.ndarray
    peak_amplitudes: np.ndarray

    def __post_init__(self) -> None:
        times = np.asarray(self.peak_times_s, dtype=np.float64).reshape(-1)
        amps = np.asarray(self.peak_amplitudes, dtype=np.float64).reshape(-1)
        if times.shape != amps.shape:
            raise ValueError("times and amplitudes must have the same length")
        if np.any(np.diff(times) <= 0):
            raise ValueError("peak times must be strictly increasing")
        object.__setattr__(self, "peak_times_s", times)
        object.__setattr__(self, "peak_amplitudes", amps)

    def __len__(self) -> int:
        return len(self.peak_times_s)

    @property
    def n(self) -> int:
        return len(self.peak_times_s)

    @property
    def intervals_s(self) -> np.ndarray:
        return np.diff(self.peak_times_s)

    def trailing(self, window_s: float, end_s: float | None = None) -> "PeakTrain":
        """Peaks with ``end_s - window_s <= t <= end_s`` (end defaults to the last peak)."""
        if len(self) == 0:
            return self
        end = self.peak_times_s[-1] if end_s is None else end_s
        keep = (self.peak_times_s >= end - window_s) & (self.peak_times_s <= end)
        return PeakTrain(self.peak_times_s[keep], self.peak_amplitudes[keep])

    def shifted(self, dt_s: float) -> "PeakTrain":
        return PeakTrain(self.peak_times_s + dt_s, self.peak_amplitudes)


def local_maxima(trace) -> np.ndarray:
    """Indices of strict local maxima (both neighbours strictly lower)."""
    x = np.asarray(trace, dtype=np.float64)
    if x.size < 3:
        return np.empty(0, dtype=np.int64)
    return np.flatnonzero((x[1:-1] > x[:-2]) & (x[1:-1] > x[2:])) + 1


def calibrate_threshold(trace, percentile: float = 5.0) -> PeakThreshold:
    """Percentile (linear interpolation) of the amplitudes of all strict maxima."""
    if not 0 < percentile < 100:
        raise ValueError("percentile must be in (0, 100)")
    x = np.asarray(trace, dtype=np.float64)
    idx = local_maxima(x)
    if idx.size < MIN_CALIBRATION_PEAKS:
        raise InsufficientPeaks(int(idx.size))
    value = float(np.percentile(x[idx], percentile, method="linear"))
    return PeakThreshold(max(value, 0.0), ThresholdSource.CALIBRATED)


def _resolve_separation(idx: np.ndarray, amps: np.ndarray, min_gap: float) -> np.ndarray:
    # strongest first, ties -> earlier; drop anything within min_gap of a kept peak
    order = np.lexsort((idx, -amps))
    kept: list[int] = []
    for k in order:
        i = int(idx[k])
        pos = bisect.bisect_left(kept, i)
        if pos > 0 and i - kept[pos - 1] < min_gap:
            continue
        if pos < len(kept) and kept[pos] - i < min_gap:
            continue
        kept.insert(pos, i)
    return np.asarray(kept, dtype=np.int64)


def detect_peaks(trace, threshold: PeakThreshold | float, min_separation_s: float,
                 fs: float = SAMPLE_RATE_HZ, t0_s: float = 0.0) -> PeakTrain:
    """Strict local maxima above ``threshold``, thinned to ``min_separation_s``.

    Of two maxima closer than ``min_separation_s`` the larger one survives
    (ties keep the earlier one).
    """
    if min_separation_s <= 0:
        raise ValueError("min_separation_s must be positive")
    thr = threshold.value if isinstance(threshold, PeakThreshold) else float(threshold)
    x = np.asarray(trace, dtype=np.float64)
    idx = local_maxima(x)
    idx = idx[x[idx] > thr]
    if idx.size > 1:
        # rounded so that e.g. 0.28 s * 100 Hz is exactly 28 samples
        idx = _resolve_separation(idx, x[idx], round(min_separation_s * fs, 9))
    return PeakTrain(t0_s + idx / fs, x[idx])


def rate_from_peaks(train: PeakTrain, window_s: float = 60.0,
                    end_s: float | None = None) -> float | None:
    """Events per minute: 60 / mean interval of the peaks in the trailing window.

    Returns None with fewer than two peaks in the window.
    """
    recent = train.trailing(window_s, end_s)
    if recent.n < 2:
        return None
    return 60.0 / float(np.mean(recent.intervals_s))


def gate(rate: float | None, bounds: tuple[float, float], what: str) -> float | None:
    if rate is None:
        return None
    if not bounds[0] <= rate <= bounds[1]:
        logger.debug("%s rate %.1f/min outside %s, reporting absent", what, rate, bounds)
        return None
    return rate


@dataclass(frozen=True)
class VitalsEstimate:
    t_s: float
    heart_rate_bpm: float | None
    respiration_rate_bpm: float | None
    provisional: bool = False

    def __post_init__(self) -> None:
        hr, rr = self.heart_rate_bpm, self.respiration_rate_bpm
        if hr is not None and not HEART_RANGE_BPM[0] <= hr <= HEART_RANGE_BPM[1]:
            raise ValueError(f"heart rate {hr} outside plausibility range")
        if rr is not None and not RESP_RANGE_BPM[0] <= rr <= RESP_RANGE_BPM[1]:
            raise ValueError(f"respiration rate {rr} outside plausibility range")


class _Band:
    """Trace, peaks and rate for one analysis frequency."""

    def __init__(self, name: str, f_hz: float, min_sep_s: float, bounds,
                 threshold: PeakThreshold | None, config: AnalysisConfig, fs: float):
        self.name = name
        self.fs = fs
        self.min_sep_s = min_sep_s
        self.bounds = bounds
        self.threshold = threshold
        self.window_s = config.rate_window_s
        self.percentile = config.peak_percentile
        self.recalibrate_every_s = config.recalibrate_every_s
        self._last_recal = 0.0
        self.cwt = StreamingCwt(f_hz, MorletParams(config.morlet_omega0), fs)
        # trailing trace, with a margin so separation is resolved consistently at the left edge
        self._keep = int(math.ceil((self.window_s + 2 * min_sep_s) * fs))
        self._trace = np.empty(0)
        self._trace_off = 0
        self._calib: list[np.ndarray] = []
        self._calib_len = 0

    def _self_calibrate(self, new: np.ndarray) -> None:
        # no threshold supplied: use the first rate window of the stream as the measurement
        self._calib.append(new)
        self._calib_len += new.size
        if self._calib_len < self.window_s * self.fs:
            return
        trace = np.concatenate(self._calib)
        try:
            self.threshold = calibrate_threshold(trace, self.percentile)
        except InsufficientPeaks:
            self.threshold = None
        self._calib = []
        self._calib_len = 0

    def push(self, samples: np.ndarray) -> float | None:
        new = self.cwt.push(samples)
        if new.size:
            self._trace = np.concatenate([self._trace, new])
            if self._trace.size > self._keep:
                drop = self._trace.size - self._keep
                self._trace = self._trace[drop:]
                self._trace_off += drop
            if self.threshold is None:
                self._self_calibrate(new)
        if self.threshold is None or self._trace.size < 3:
            return None
        end_s = (self._trace_off + self._trace.size - 1) / self.fs
        if (self.recalibrate_every_s
                and end_s - self._last_recal >= self.recalibrate_every_s):
            self._last_recal = end_s
            try:
                self.threshold = calibrate_threshold(self._trace, self.percentile)
            except InsufficientPeaks:
                pass
        train = detect_peaks(self._trace, self.threshold, self.min_sep_s,
                             self.fs, self._trace_off / self.fs)
        return gate(rate_from_peaks(train, self.window_s, end_s), self.bounds, self.name)


class VitalsEstimator:
    """Per-stream estimator fed one block (normally one second) at a time.

    ``thresholds`` maps ``"heart"`` / ``"resp"`` to a :class:`PeakThreshold`.
    A missing band threshold is calibrated from the first ``rate_window_s``
    of the stream's own trace; estimates for that band stay absent until then.
    One instance per stream; not thread-safe.
    """

    def __init__(self, config: AnalysisConfig = AnalysisConfig(),
                 thresholds: Mapping[str, PeakThreshold] | None = None,
                 fs: float = SAMPLE_RATE_HZ):
        thresholds = dict(thresholds or {})
        self.config = config
        self.fs = fs
        self._n = 0
        self.heart = _Band("heart", config.heart_freq_hz, config.heart_min_separation_s,
                           HEART_RANGE_BPM, thresholds.get("heart"), config, fs)
        self.resp = _Band("resp", config.resp_freq_hz, config.resp_min_separation_s,
                          RESP_RANGE_BPM, thresholds.get("resp"), config, fs)

    @property
    def elapsed_s(self) -> float:
        return self._n / self.fs

    def push(self, samples) -> VitalsEstimate:
        samples = np.asarray(samples, dtype=np.float64).reshape(-1)
        self._n += samples.size
        hr = self.heart.push(samples)
        rr = self.resp.push(samples)
        return VitalsEstimate(self.elapsed_s, hr, rr,
                              provisional=self.elapsed_s < self.config.rate_window_s)


def iter_vitals(signal: AccelSeries, config: AnalysisConfig = AnalysisConfig(),
                thresholds: Mapping[str, PeakThreshold] | None = None,
                block_s: float = 1.0) -> Iterator[VitalsEstimate]:
    est = VitalsEstimator(config, thresholds, signal.sample_rate_hz)
    step = int(round(block_s * signal.sample_rate_hz))
    for i in range(0, len(signal.values), step):
        yield est.push(signal.values[i:i + step])


def estimate_vitals(signal: AccelSeries, config: AnalysisConfig = AnalysisConfig(),
                    thresholds: Mapping[str, PeakThreshold] | None = None) -> list[VitalsEstimate]:
    """One estimate per second of ``signal``."""
    return list(iter_vitals(signal, config, thresholds))


def band_traces(signal, config: AnalysisConfig = AnalysisConfig()) -> dict[str, np.ndarray]:
    """Full-signal |CWT| traces at the heart and respiration frequencies."""
    params = MorletParams(config.morlet_omega0)
    return {
        "heart": cwt_row(signal, config.heart_freq_hz, params),
        "resp": cwt_row(signal, config.resp_freq_hz, params),
    }


def calibrate_bands(signal, config: AnalysisConfig = AnalysisConfig()) -> dict[str, PeakThreshold]:
    """Calibrate both band thresholds from one calibration measurement."""
    return {name: calibrate_threshold(trace, config.peak_percentile)
            for name, trace in band_traces(signal, config).items()}


def pick_vitals_channel(occupied: Mapping[SensorChannel, AccelSeries],
                        sensor: Sensor = Sensor.LIS3DHH) -> SensorChannel:
    """The axis of ``sensor`` with the highest variance while occupied."""
    candidates = [ch for ch in occupied if ch.sensor is sensor]
    if not candidates:
        raise ValueError(f"no {sensor.value} channel in the occupied segment")
    return max(candidates, key=lambda ch: float(np.var(occupied[ch].values)))
