"""Ballistocardiography toolkit: packet codec, Morlet CWT, vitals and occupancy
estimation, synthetic recordings, a TCP ingest server and the ``bcg`` CLI."""

from .codec import PACKET_SIZE, SamplePacket, Sca10hFrame, decode, encode, min_bitrate_bps
from .cwt import MorletParams, Scalogram, StreamingCwt, cwt_row, scalogram
from .occupancy import (
    InsufficientSeparation,
    OccupancyConfig,
    OccupancyTracker,
    calibrate_occupancy,
)
from .pipeline import Calibration, StreamPipeline
from .synth import SynthParams, generate_bcg, generate_packets
from .types import AccelSeries, AnalysisConfig, Axis, Sensor, SensorChannel
from .vitals import (
    InsufficientPeaks,
    PeakThreshold,
    VitalsEstimator,
    calibrate_threshold,
    detect_peaks,
    rate_from_peaks,
)

__version__ = "0.1.0"

__all__ = [
    "PACKET_SIZE",
    "AccelSeries",
    "AnalysisConfig",
    "Axis",
    "Calibration",
    "InsufficientPeaks",
    "InsufficientSeparation",
    "MorletParams",
    "OccupancyConfig",
    "OccupancyTracker",
    "PeakThreshold",
    "SamplePacket",
    "Sca10hFrame",
    "Scalogram",
    "Sensor",
    "SensorChannel",
    "StreamPipeline",
    "StreamingCwt",
    "SynthParams",
    "VitalsEstimator",
    "calibrate_occupancy",
    "calibrate_threshold",
    "cwt_row",
    "decode",
    "detect_peaks",
    "encode",
    "generate_bcg",
    "generate_packets",
    "min_bitrate_bps",
    "rate_from_peaks",
    "scalogram",
]
