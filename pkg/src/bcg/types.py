"""Shared vocabulary: sensor channels, sample scaling, series and analysis config."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

SAMPLE_RATE_HZ = 100.0
SAMPLE_PERIOD_MS = 10


class Sensor(enum.Enum):
    LIS3DHH = "LIS3DHH"
    SCA61T = "SCA61T"


class Axis(enum.Enum):
    X = "X"
    Y = "Y"
    Z = "Z"


_SENSOR_AXES = {
    Sensor.LIS3DHH: (Axis.X, Axis.Y, Axis.Z),
    Sensor.SCA61T: (Axis.X, Axis.Y),
}


@dataclass(frozen=True)
class SensorChannel:
    sensor: Sensor
    axis: Axis

    def __post_init__(self) -> None:
        # accept plain strings from files and CLI flags
        object.__setattr__(self, "sensor", Sensor(self.sensor))
        object.__setattr__(self, "axis", Axis(self.axis))
        if self.axis not in _SENSOR_AXES[self.sensor]:
            raise ValueError(f"{self.sensor.value} has no {self.axis.value} axis")

    @classmethod
    def parse(cls, text: str) -> "SensorChannel":
        """Parse ``"LIS3DHH:X"`` (also ``LIS3DHH.X`` / ``LIS3DHH/X``)."""
        for sep in (":", ".", "/"):
            if sep in text:
                sensor, axis = text.split(sep, 1)
                return cls(Sensor(sensor.strip().upper()), Axis(axis.strip().upper()))
        raise ValueError(f"cannot parse channel {text!r}, expected SENSOR:AXIS")

    def __str__(self) -> str:
        return f"{self.sensor.value}:{self.axis.value}"


ALL_CHANNELS = tuple(
    SensorChannel(sensor, axis) for sensor, axes in _SENSOR_AXES.items() for axis in axes
)


def channels_of(sensor: Sensor) -> tuple[SensorChannel, ...]:
    return tuple(SensorChannel(sensor, axis) for axis in _SENSOR_AXES[sensor])


@dataclass(frozen=True)
class SensorSpec:
    """Static accelerometer parameters.

    Attributes
    ----------
    range_g : float
        Full-scale range, +/- g.
    sensitivity_mg_per_lsb : float
        Acceleration represented by one LSB.
    noise_density_ug_per_rthz : float
        Output noise density in ug/sqrt(Hz).
    bits : int
        Two's-complement width of the raw output.
    """

    range_g: float
    sensitivity_mg_per_lsb: float
    noise_density_ug_per_rthz: float
    bits: int

    def __post_init__(self) -> None:
        if self.range_g <= 0:
            raise ValueError("range_g must be positive")
        if self.sensitivity_mg_per_lsb <= 0:
            raise ValueError("sensitivity_mg_per_lsb must be positive")
        if self.bits < 2 or self.bits > 16:
            raise ValueError("bits must be in [2, 16]")

    @property
    def raw_min(self) -> int:
        return -(1 << (self.bits - 1))

    @property
    def raw_max(self) -> int:
        return (1 << (self.bits - 1)) - 1

    def noise_sigma_mg(self, sample_rate_hz: float = SAMPLE_RATE_HZ) -> float:
        """Per-sample white-noise sigma: density * sqrt(fs / 2)."""
        return self.noise_density_ug_per_rthz * 1e-3 * np.sqrt(sample_rate_hz / 2.0)


SENSOR_SPECS = {
    Sensor.LIS3DHH: SensorSpec(
        range_g=2.5, sensitivity_mg_per_lsb=0.076, noise_density_ug_per_rthz=45.0, bits=16
    ),
    Sensor.SCA61T: SensorSpec(
        range_g=1.0, sensitivity_mg_per_lsb=1.22, noise_density_ug_per_rthz=14.0, bits=11
    ),
}


def raw_to_mg(raw, spec: SensorSpec):
    """Convert raw LSB counts (scalar or array) to milli-g.

    Raises ValueError when any value does not fit ``spec.bits`` two's
    complement.
    """
    arr = np.asarray(raw)
    if arr.dtype.kind not in "iu":
        if not np.all(np.equal(np.mod(arr, 1), 0)):
            raise ValueError("raw samples must be integers")
    if arr.size and (arr.min() < spec.raw_min or arr.max() > spec.raw_max):
        raise ValueError(
            f"raw value outside {spec.bits}-bit range [{spec.raw_min}, {spec.raw_max}]"
        )
    mg = arr.astype(np.float64) * spec.sensitivity_mg_per_lsb
    if np.ndim(raw) == 0:
        return float(mg)
    return mg


def mg_to_raw(mg, spec: SensorSpec):
    """Quantize milli-g to the nearest LSB, saturating at the sensor range."""
    arr = np.rint(np.asarray(mg, dtype=np.float64) / spec.sensitivity_mg_per_lsb)
    arr = np.clip(arr, spec.raw_min, spec.raw_max).astype(np.int64)
    if np.ndim(mg) == 0:
        return int(arr)
    return arr


@dataclass(frozen=True, eq=False)
class AccelSeries:
    """Uniformly sampled, gap-free acceleration channel in milli-g.

    Sample ``i`` is taken at ``t0_ms + i * 10`` ms.
    """

    channel: SensorChannel
    t0_ms: int
    values: np.ndarray
    sample_rate_hz: float = SAMPLE_RATE_HZ

    def __post_init__(self) -> None:
        if self.sample_rate_hz != SAMPLE_RATE_HZ:
            raise ValueError("only 100 Hz series are supported")
        values = np.array(self.values, dtype=np.float64).reshape(-1)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "t0_ms", int(self.t0_ms))

    def __len__(self) -> int:
        return len(self.values)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AccelSeries):
            return NotImplemented
        return (
            self.channel == other.channel
            and self.t0_ms == other.t0_ms
            and np.array_equal(self.values, other.values)
        )

    @property
    def duration_s(self) -> float:
        return len(self.values) / self.sample_rate_hz

    @property
    def times_ms(self) -> np.ndarray:
        return self.t0_ms + SAMPLE_PERIOD_MS * np.arange(len(self.values), dtype=np.int64)

    @property
    def times_s(self) -> np.ndarray:
        return np.arange(len(self.values)) / self.sample_rate_hz

    def concat(self, other: "AccelSeries") -> "AccelSeries":
        """Append an adjacent block; the blocks must abut with no gap."""
        if other.channel != self.channel:
            raise ValueError("cannot concatenate different channels")
        expected = self.t0_ms + SAMPLE_PERIOD_MS * len(self.values)
        if other.t0_ms != expected:
            raise ValueError(f"gap between blocks: expected t0 {expected}, got {other.t0_ms}")
        return AccelSeries(self.channel, self.t0_ms, np.concatenate([self.values, other.values]))

    def slice_s(self, start_s: float, stop_s: float) -> "AccelSeries":
        i0 = max(0, int(round(start_s * self.sample_rate_hz)))
        i1 = min(len(self.values), int(round(stop_s * self.sample_rate_hz)))
        return AccelSeries(self.channel, self.t0_ms + SAMPLE_PERIOD_MS * i0, self.values[i0:i1])


@dataclass(frozen=True)
class AnalysisConfig:
    """Tunables of the vitals and occupancy pipelines.

    ``resp_freq_hz`` (0.8 Hz) sits above ``resp_band_hz`` (0-0.5 Hz); both
    are kept as given and not reconciled.
    """

    heart_freq_hz: float = 3.5
    resp_freq_hz: float = 0.8
    heart_band_hz: tuple[float, float] = (1.0, 25.0)
    resp_band_hz: tuple[float, float] = (0.0, 0.5)
    peak_percentile: float = 5.0
    rate_window_s: float = 60.0
    occupancy_debounce_s: float = 2.0
    occupancy_smoothing_s: float = 1.0
    morlet_omega0: float = 6.0
    heart_min_separation_s: float = 0.25
    resp_min_separation_s: float = 1.5
    vitals_channel: SensorChannel = field(
        default_factory=lambda: SensorChannel(Sensor.LIS3DHH, Axis.X)
    )
    # seconds between threshold re-calibrations; None keeps the static threshold
    recalibrate_every_s: float | None = None

    def __post_init__(self) -> None:
        lo, hi = self.heart_band_hz
        if not lo <= self.heart_freq_hz <= hi:
            raise ValueError("heart_freq_hz must lie within heart_band_hz")
        if not 0 < self.peak_percentile < 100:
            raise ValueError("peak_percentile must be in (0, 100)")
        if self.resp_freq_hz <= 0:
            raise ValueError("resp_freq_hz must be positive")
        if self.rate_window_s <= 0:
            raise ValueError("rate_window_s must be positive")
        if self.occupancy_debounce_s < 0:
            raise ValueError("occupancy_debounce_s must be non-negative")
        if self.morlet_omega0 < 5:
            raise ValueError("morlet_omega0 must be >= 5")
        if isinstance(self.vitals_channel, str):
            object.__setattr__(self, "vitals_channel", SensorChannel.parse(self.vitals_channel))

    def to_dict(self) -> dict:
        return {
            "heart_freq_hz": self.heart_freq_hz,
            "resp_freq_hz": self.resp_freq_hz,
            "heart_band_hz": list(self.heart_band_hz),
            "resp_band_hz": list(self.resp_band_hz),
            "peak_percentile": self.peak_percentile,
            "rate_window_s": self.rate_window_s,
            "occupancy_debounce_s": self.occupancy_debounce_s,
            "occupancy_smoothing_s": self.occupancy_smoothing_s,
            "morlet_omega0": self.morlet_omega0,
            "heart_min_separation_s": self.heart_min_separation_s,
            "resp_min_separation_s": self.resp_min_separation_s,
            "vitals_channel": str(self.vitals_channel),
            "recalibrate_every_s": self.recalibrate_every_s,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AnalysisConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown analysis config keys: {sorted(unknown)}")
        kwargs = dict(data)
        for key in ("heart_band_hz", "resp_band_hz"):
            if key in kwargs:
                kwargs[key] = tuple(float(v) for v in kwargs[key])
        return cls(**kwargs)
