"""``bcg`` command-line entry point.

Exit codes: 0 ok, 1 usage, 2 input format, 3 calibration failure,
4 network, storage or other I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import ingest
from .codec import PacketError
from .cwt import MorletParams, scalogram
from .occupancy import InsufficientSeparation, calibrate_best_axis
from .pipeline import Calibration, StreamPipeline, load_calibrations, save_calibration
from .signalfile import (
    SignalFileError,
    is_packet_dump,
    read_blocks,
    read_channels,
    read_packets,
    write_csv,
    write_packets,
)
from .synth import SynthParams, bedding_down_params, generate_bcg, packets_from_recording
from .types import AnalysisConfig, SensorChannel
from .vitals import InsufficientPeaks, calibrate_bands, pick_vitals_channel

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_CALIBRATION, EXIT_NETWORK = range(5)
LOG_LEVELS = ["DEBUG", "INFO", "WARNING", "ERROR"]
OUTPUT_COLUMNS = ["t_ms", "seq", "occupied", "heart_bpm", "resp_bpm", "provisional"]

log = logging.getLogger("bcg")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# flag dest -> AnalysisConfig field
_CONFIG_FLAGS = {
    "heart_freq": "heart_freq_hz",
    "resp_freq": "resp_freq_hz",
    "percentile": "peak_percentile",
    "window": "rate_window_s",
    "debounce": "occupancy_debounce_s",
    "omega0": "morlet_omega0",
    "vitals_channel": "vitals_channel",
    "recalibrate_every": "recalibrate_every_s",
}


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("analysis config (flags override --config, which overrides defaults)")
    g.add_argument("--config", type=Path, help="JSON file of analysis config fields")
    g.add_argument("--heart-freq", type=float, metavar="HZ", help="heartbeat analysis frequency")
    g.add_argument("--resp-freq", type=float, metavar="HZ", help="respiration analysis frequency")
    g.add_argument("--percentile", type=float, help="peak threshold percentile")
    g.add_argument("--window", type=float, metavar="S", help="rate window length")
    g.add_argument("--debounce", type=float, metavar="S", help="occupancy debounce")
    g.add_argument("--omega0", type=float, help="Morlet centre frequency (>= 5)")
    g.add_argument("--vitals-channel", metavar="SENSOR:AXIS", help="e.g. LIS3DHH:X")
    g.add_argument("--recalibrate-every", type=float, metavar="S",
                   help="re-derive peak thresholds from the trailing trace this often")


def _vitals_channel_given(args: argparse.Namespace) -> bool:
    if args.vitals_channel is not None:
        return True
    if args.config is None:
        return False
    return "vitals_channel" in json.loads(args.config.read_text())


def analysis_config(args: argparse.Namespace) -> AnalysisConfig:
    data: dict = {}
    if getattr(args, "config", None) is not None:
        try:
            data = json.loads(args.config.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(data, dict):
            raise UsageError(f"config {args.config} must hold a JSON object")
    for dest, key in _CONFIG_FLAGS.items():
        value = getattr(args, dest, None)
        if value is not None:
            data[key] = value
    try:
        return AnalysisConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid analysis config: {exc}") from exc


def _add_synth_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("synthetic subject")
    g.add_argument("--hr", type=float, default=70.0, help="heart rate, bpm (default 70)")
    g.add_argument("--rr", type=float, default=15.0, help="respiration rate, /min (default 15)")
    g.add_argument("--jitter", type=float, default=3.0, help="beat interval jitter, %% (default 3)")
    g.add_argument("--noise-density", type=float, metavar="UG_RTHZ",
                   help="noise density for every sensor (default: per-sensor datasheet value)")
    g.add_argument("--empty", type=float, default=0.0, metavar="S",
                   help="furniture empty for the first S seconds (default 0)")
    g.add_argument("--seed", type=int, default=0)


def synth_params(args: argparse.Namespace, duration_s: float) -> SynthParams:
    try:
        params = SynthParams(heart_rate_bpm=args.hr, resp_rate_bpm=args.rr,
                             hr_jitter_pct=args.jitter,
                             noise_density_ug_per_rthz=args.noise_density, seed=args.seed)
        if args.empty >= duration_s:
            params = replace(params, occupied_intervals_s=())
        elif args.empty > 0:
            params = bedding_down_params(params, args.empty, duration_s)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return params


def _host_port(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise argparse.ArgumentTypeError(f"expected HOST:PORT, got {text!r}")
    return host or "127.0.0.1", int(port)


def _freq_list(text: str) -> list[float]:
    try:
        freqs = sorted({float(f) for f in text.split(",") if f.strip()})
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad frequency list {text!r}") from exc
    if not freqs:
        raise argparse.ArgumentTypeError("empty frequency list")
    return freqs


def _select_calibration(path: Path | None, sensor_id: str | None) -> Calibration | None:
    if path is None:
        return None
    try:
        cals = load_calibrations(path)
    except (OSError, ValueError, KeyError) as exc:
        raise SignalFileError(f"cannot read calibration {path}: {exc}") from exc
    if sensor_id is not None:
        if sensor_id not in cals:
            raise UsageError(f"no calibration for sensor {sensor_id!r} in {path}")
        return cals[sensor_id]
    if len(cals) != 1:
        raise UsageError(f"{path} holds {len(cals)} calibrations; pick one with --sensor-id")
    return next(iter(cals.values()))


def cmd_analyze(args: argparse.Namespace) -> int:
    config = analysis_config(args)
    cal = _select_calibration(args.calibration, args.sensor_id)
    blocks = read_blocks(args.input)
    pipeline = StreamPipeline(config, cal)
    if pipeline.uncalibrated:
        log.warning("no occupancy calibration: %s", "using the SCA10H occupancy flag"
                    if is_packet_dump(args.input) else "assuming the furniture is occupied")
    try:
        records = [pipeline.process(b) for b in blocks]
    except ValueError as exc:
        raise SignalFileError(f"{args.input}: {exc}") from exc
    rows = [{k: r[k] for k in OUTPUT_COLUMNS} for r in records if r["occupied"]]
    out = open(args.output, "w", newline="") if args.output else sys.stdout
    try:
        if args.format == "csv":
            writer = csv.DictWriter(out, OUTPUT_COLUMNS)
            writer.writeheader()
            for row in rows:
                writer.writerow({k: "" if v is None else v for k, v in row.items()})
        else:
            for row in rows:
                out.write(json.dumps(row) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    log.info("%d of %d seconds occupied", len(rows), len(records))
    return EXIT_OK


def cmd_scalogram(args: argparse.Namespace) -> int:
    config = analysis_config(args)
    channels = read_channels(args.input)
    channel = SensorChannel.parse(args.channel) if args.channel else config.vitals_channel
    if channel not in channels:
        raise SignalFileError(f"{args.input} has no {channel} channel")
    try:
        grid = scalogram(channels[channel], args.freqs, MorletParams(config.morlet_omega0))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    grid.to_csv(args.output if args.output else sys.stdout, time_step=args.time_step)
    return EXIT_OK


def cmd_calibrate(args: argparse.Namespace) -> int:
    config = analysis_config(args)
    empty = read_channels(args.empty)
    occupied = read_channels(args.occupied)
    calib = read_channels(args.calib_signal)
    channel = config.vitals_channel
    if not _vitals_channel_given(args):
        channel = pick_vitals_channel(occupied, channel.sensor)
    if channel not in calib:
        raise SignalFileError(f"{args.calib_signal} has no {channel} channel")
    occ = calibrate_best_axis(empty, occupied, debounce_s=config.occupancy_debounce_s,
                              smoothing_window_s=config.occupancy_smoothing_s)
    thresholds = calibrate_bands(calib[channel], config)
    cal = Calibration(args.sensor_id, occ, thresholds, channel)
    save_calibration(args.output, cal)
    log.info("calibrated %s: occupancy on %s (threshold %.3g mg), heart %.4g, resp %.4g",
             args.sensor_id, occ.axis, occ.threshold_mg,
             thresholds["heart"].value, thresholds["resp"].value)
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    config = analysis_config(args)
    cals = {}
    if args.calibration is not None:
        try:
            cals = load_calibrations(args.calibration)
        except (OSError, ValueError, KeyError) as exc:
            raise SignalFileError(f"cannot read calibration {args.calibration}: {exc}") from exc

    def ready(server):
        host, port = server.server_address[:2]
        print(f"listening on {host}:{port}", flush=True)

    ingest.serve(args.bind, args.storage, config, cals, ready=ready)
    return EXIT_OK


def cmd_emulate(args: argparse.Namespace) -> int:
    if args.input is not None:
        if not is_packet_dump(args.input):
            raise UsageError("emulate --input needs a .bcg packet dump")
        packets = read_packets(args.input)
    else:
        if args.duration <= 0 or args.duration != int(args.duration):
            raise UsageError("--duration must be a positive whole number of seconds")
        params = synth_params(args, args.duration)
        packets = packets_from_recording(generate_bcg(params, int(args.duration)))
    host, port = args.target
    sent = ingest.emulate(host, port, args.sensor_id, packets, realtime=not args.fast)
    log.info("sent %d packets as %s", sent, args.sensor_id)
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    if args.duration <= 0 or args.duration != int(args.duration):
        raise UsageError("--duration must be a positive whole number of seconds")
    params = synth_params(args, args.duration)
    rec = generate_bcg(params, int(args.duration))
    if is_packet_dump(args.output):
        write_packets(args.output, packets_from_recording(rec))
    else:
        write_csv(args.output, rec.channels)
    if args.truth is not None:
        truth = rec.truth
        args.truth.write_text(json.dumps({
            "heart_rate_bpm": truth.heart_rate_bpm,
            "resp_rate_bpm": truth.resp_rate_bpm,
            "occupied_intervals_s": [list(iv) for iv in truth.occupied_intervals_s],
            "beat_times_s": np.round(truth.beat_times_s, 6).tolist(),
            "breath_times_s": np.round(truth.breath_times_s, 6).tolist(),
        }, indent=1))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bcg", description="Ballistocardiography toolkit.")
    parser.add_argument("--log-level", default="WARNING", choices=LOG_LEVELS)
    # also accepted after the subcommand
    common = _Parser(add_help=False)
    common.add_argument("--log-level", default=argparse.SUPPRESS, choices=LOG_LEVELS)
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND",
                                parser_class=lambda **kw: _Parser(parents=[common], **kw))

    p = sub.add_parser("analyze", help="per-second vitals for the occupied seconds of a signal file")
    p.add_argument("input", type=Path, help="CSV (t_ms,sensor,axis,mg) or .bcg packet dump")
    p.add_argument("-o", "--output", type=Path, help="output file (default stdout)")
    p.add_argument("--format", choices=["jsonl", "csv"], default="jsonl")
    p.add_argument("--calibration", type=Path, help="calibration file")
    p.add_argument("--sensor-id", help="which calibration entry to use")
    _add_config_flags(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("scalogram", help="export |CWT| over a frequency grid as CSV")
    p.add_argument("input", type=Path)
    p.add_argument("--freqs", type=_freq_list, required=True, metavar="F1,F2,...",
                   help="analysis frequencies in Hz")
    p.add_argument("--channel", metavar="SENSOR:AXIS", help="default: the vitals channel")
    p.add_argument("--time-step", type=int, default=1, metavar="N", help="keep every Nth column")
    p.add_argument("-o", "--output", type=Path, help="output CSV (default stdout)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_scalogram)

    p = sub.add_parser("calibrate", help="derive occupancy and peak thresholds for one sensor")
    p.add_argument("--empty", type=Path, required=True, help="recording of the empty furniture")
    p.add_argument("--occupied", type=Path, required=True, help="recording with the subject present")
    p.add_argument("--calib-signal", type=Path, required=True,
                   help="peak-threshold measurement (an empty-then-occupied recording works best)")
    p.add_argument("--sensor-id", required=True)
    p.add_argument("-o", "--output", type=Path, required=True,
                   help="calibration file; other sensors' entries are kept")
    _add_config_flags(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("serve", help="run the ingest server")
    p.add_argument("--bind", type=_host_port, default=("0.0.0.0", 9750), metavar="HOST:PORT")
    p.add_argument("--storage", type=Path, required=True, help="directory for session files")
    p.add_argument("--calibration", type=Path, help="calibration file")
    _add_config_flags(p)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("emulate", help="stream packets to a server like a sensor")
    p.add_argument("--target", type=_host_port, required=True, metavar="HOST:PORT")
    p.add_argument("--sensor-id", required=True)
    p.add_argument("--duration", type=float, default=60.0, metavar="S")
    p.add_argument("--input", type=Path, help="send this .bcg dump instead of synthetic data")
    p.add_argument("--fast", action="store_true", help="send as fast as possible, not 1 packet/s")
    _add_synth_flags(p)
    p.set_defaults(func=cmd_emulate)

    p = sub.add_parser("synth", help="write a synthetic recording")
    p.add_argument("-o", "--output", type=Path, required=True, help=".bcg or .csv")
    p.add_argument("--duration", type=float, default=60.0, metavar="S")
    p.add_argument("--truth", type=Path, help="also write the ground truth as JSON")
    _add_synth_flags(p)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"bcg: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InsufficientSeparation, InsufficientPeaks) as exc:
        print(f"bcg: calibration failed: {exc}", file=sys.stderr)
        return EXIT_CALIBRATION
    except (SignalFileError, PacketError) as exc:
        print(f"bcg: bad input: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"bcg: {exc}", file=sys.stderr)
        return EXIT_NETWORK
    except ValueError as exc:
        print(f"bcg: bad input: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
