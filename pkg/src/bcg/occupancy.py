"""Furniture occupancy from the tilt-induced shift of a ground-parallel axis."""

from __future__ import annotations

import collections
from dataclasses import dataclass
from typing import Iterator, Mapping

import numpy as np

from .types import AccelSeries, Axis, SensorChannel

MIN_SEGMENT_S = 5.0
SEPARATION_SIGMAS = 3.0


class InsufficientSeparation(ValueError):
    def __init__(self, gap_mg: float, noise_mg: float):
        self.gap_mg = gap_mg
        self.noise_mg = noise_mg
        super().__init__(
            f"empty/occupied levels differ by {gap_mg:.3g} mg, which is not more than "
            f"{SEPARATION_SIGMAS:g}x the pooled noise ({noise_mg:.3g} mg); check that the "
            "occupied recording really has someone on the furniture, or mount the sensor "
            "where the frame tilts more"
        )


@dataclass(frozen=True)
class OccupancyConfig:
    axis: SensorChannel
    baseline_mg: float
    threshold_mg: float
    debounce_s: float = 2.0
    smoothing_window_s: float = 1.0

    def __post_init__(self) -> None:
        if isinstance(self.axis, str):
            object.__setattr__(self, "axis", SensorChannel.parse(self.axis))
        if self.axis.axis is Axis.Z:
            raise ValueError("occupancy needs a ground-parallel axis (X or Y)")
        if not self.threshold_mg > 0:
            raise ValueError("threshold_mg must be positive")
        if self.debounce_s < 0:
            raise ValueError("debounce_s must be non-negative")
        if self.smoothing_window_s <= 0:
            raise ValueError("smoothing_window_s must be positive")

    def to_dict(self) -> dict:
        return {
            "axis": str(self.axis),
            "baseline_mg": self.baseline_mg,
            "threshold_mg": self.threshold_mg,
            "debounce_s": self.debounce_s,
            "smoothing_window_s": self.smoothing_window_s,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "OccupancyConfig":
        return cls(
            SensorChannel.parse(data["axis"]),
            float(data["baseline_mg"]),
            float(data["threshold_mg"]),
            float(data.get("debounce_s", 2.0)),
            float(data.get("smoothing_window_s", 1.0)),
        )


@dataclass(frozen=True)
class OccupancyState:
    occupied: bool
    since_ms: int
    raw_level_mg: float


def _separation(empty: AccelSeries, occupied: AccelSeries) -> tuple[float, float, float]:
    for name, seg in (("empty", empty), ("occupied", occupied)):
        if seg.duration_s < MIN_SEGMENT_S:
            raise ValueError(f"{name} segment is {seg.duration_s:.1f} s, need >= {MIN_SEGMENT_S:g} s")
    baseline = float(np.mean(empty.values))
    gap = abs(float(np.mean(occupied.values)) - baseline)
    noise = float(np.sqrt((np.var(empty.values, ddof=1) + np.var(occupied.values, ddof=1)) / 2))
    return baseline, gap, noise


def calibrate_occupancy(empty_segment: AccelSeries, occupied_segment: AccelSeries,
                        debounce_s: float = 2.0, smoothing_window_s: float = 1.0) -> OccupancyConfig:
    """Threshold halfway between the empty and occupied levels of one axis.

    Works on ``|a - baseline|`` so the tilt polarity does not matter.
    """
    if empty_segment.channel != occupied_segment.channel:
        raise ValueError("segments come from different channels")
    baseline, gap, noise = _separation(empty_segment, occupied_segment)
    if gap <= SEPARATION_SIGMAS * noise:
        raise InsufficientSeparation(gap, noise)
    return OccupancyConfig(empty_segment.channel, baseline, gap / 2.0, debounce_s, smoothing_window_s)


def calibrate_best_axis(empty: Mapping[SensorChannel, AccelSeries],
                        occupied: Mapping[SensorChannel, AccelSeries],
                        **kwargs) -> OccupancyConfig:
    """Calibrate on whichever ground-parallel axis shows the larger level gap."""
    candidates = [ch for ch in empty if ch.axis is not Axis.Z and ch in occupied]
    if not candidates:
        raise ValueError("no ground-parallel axis present in both segments")
    best = max(candidates, key=lambda ch: _separation(empty[ch], occupied[ch])[1])
    return calibrate_occupancy(empty[best], occupied[best], **kwargs)


class OccupancyTracker:
    """Debounced occupied/empty state machine for one stream.

    The level is the moving mean of ``|sample - baseline|`` over
    ``smoothing_window_s``; the state flips once the level has stayed on the
    other side of the threshold for ``debounce_s`` without interruption.
    Not thread-safe; use one tracker per stream.
    """

    def __init__(self, cfg: OccupancyConfig, occupied: bool = False):
        self.cfg = cfg
        self._window_ms = cfg.smoothing_window_s * 1000.0
        self._debounce_ms = cfg.debounce_s * 1000.0
        self._samples: collections.deque[tuple[int, float]] = collections.deque()
        self._sum = 0.0
        self._pending_since: int | None = None
        self._last_t: int | None = None
        self.state: OccupancyState | None = None
        self._initial = occupied

    def update(self, sample_mg: float, t_ms: int) -> OccupancyState:
        if self._last_t is not None and t_ms < self._last_t:
            raise ValueError("timestamps must be non-decreasing")
        self._last_t = t_ms
        level = abs(float(sample_mg) - self.cfg.baseline_mg)
        self._samples.append((t_ms, level))
        self._sum += level
        while self._samples[0][0] <= t_ms - self._window_ms:
            self._sum -= self._samples.popleft()[1]
        smoothed = self._sum / len(self._samples)

        if self.state is None:
            self.state = OccupancyState(self._initial, t_ms, smoothed)
        occupied, since = self.state.occupied, self.state.since_ms
        if (smoothed > self.cfg.threshold_mg) != occupied:
            if self._pending_since is None:
                self._pending_since = t_ms
            if t_ms - self._pending_since >= self._debounce_ms:
                occupied, since = not occupied, t_ms
                self._pending_since = None
        else:
            self._pending_since = None
        self.state = OccupancyState(occupied, since, smoothed)
        return self.state

    def update_block(self, values, t0_ms: int, period_ms: int = 10) -> OccupancyState:
        """Feed consecutive samples; return the state after the last one."""
        state = self.state
        for i, v in enumerate(np.asarray(values, dtype=np.float64)):
            state = self.update(v, t0_ms + i * period_ms)
        return state


def update_occupancy(tracker: OccupancyTracker, sample_mg: float, t_ms: int) -> OccupancyState:
    return tracker.update(sample_mg, t_ms)


def occupancy_trace(series: AccelSeries, cfg: OccupancyConfig) -> list[OccupancyState]:
    tracker = OccupancyTracker(cfg)
    return [tracker.update(v, t) for v, t in zip(series.values, series.times_ms.tolist())]


def transitions(states: list[OccupancyState]) -> Iterator[dict]:
    """Transition events ``{t_ms, occupied, level_mg}`` from a state trace."""
    prev = None
    for st in states:
        if prev is not None and st.occupied != prev:
            yield {"t_ms": st.since_ms, "occupied": st.occupied, "level_mg": st.raw_level_mg}
        prev = st.occupied
