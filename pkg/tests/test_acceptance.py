"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

The lines are printed as they are produced and repeated in pytest's terminal
summary. Run directly with ``python3 -m pytest tests/test_acceptance.py -v``.
"""

import contextlib
import json
import signal
import socket
import subprocess
import sys
import threading
import time

import numpy as np
import pytest

from bcg.codec import PACKET_SIZE, decode, encode, min_bitrate_bps
from bcg.cwt import cwt_row
from bcg.ingest import emulate, read_session_file
from bcg.occupancy import OccupancyConfig, occupancy_trace, transitions
from bcg.synth import SynthParams, bedding_down_params, generate_bcg, generate_packets
from bcg.types import AccelSeries, SensorChannel
from bcg.vitals import calibrate_bands, estimate_vitals

from conftest import VITALS_CH, bedding_down_thresholds, rates
from oracles import cwt_direct_matrix
from test_codec import random_packet

RESULTS: list[str] = []


def report(n, title, ok, detail):
    line = f"criterion {n} {'PASS' if ok else 'FAIL'}: {title} ({detail})"
    RESULTS.append(line)
    print(line)
    assert ok, line


def test_criterion_1_packet_round_trip():
    rng = np.random.default_rng(1)
    packets = [random_packet(rng) for _ in range(1000)]
    start = time.perf_counter()
    encoded = [encode(p) for p in packets]
    decoded = [decode(b) for b in encoded]
    elapsed = time.perf_counter() - start
    sizes = {len(b) for b in encoded}
    exact = sum(a == b for a, b in zip(packets, decoded))
    report(1, "1000 random packets round-trip", exact == 1000 and sizes == {1046} and elapsed < 1.0,
           f"{exact}/1000 exact, sizes {sorted(sizes)}, {elapsed:.3f} s")


def test_criterion_2_bandwidth():
    bps = min_bitrate_bps(PACKET_SIZE, 1.0)
    report(2, "minimum bitrate", bps == 8368 and f"{bps / 1000:.3g}" == "8.37",
           f"{bps:g} bps")


def test_criterion_3_cwt_oracle():
    rng = np.random.default_rng(3)
    worst = 0.0
    start = time.perf_counter()
    for _ in range(50):
        x = rng.standard_normal(1024)
        for f in (0.8, 3.5, 10.0):
            ref = np.abs(cwt_direct_matrix(x, f))
            worst = max(worst, float(np.max(np.abs(cwt_row(x, f) - ref) / ref)))
    elapsed = time.perf_counter() - start
    report(3, "CWT equals direct convolution", worst <= 1e-6 and elapsed < 10.0,
           f"max relative error {worst:.2e}, {elapsed:.2f} s")


def test_criterion_4_vitals_recovery():
    lines, ok = [], True
    start = time.perf_counter()
    for hr in (55, 70, 90):
        for rr in (10, 15, 20):
            seed = 100 * hr + rr
            params = SynthParams(heart_rate_bpm=hr, resp_rate_bpm=rr, hr_jitter_pct=3.0,
                                 noise_density_ug_per_rthz=45.0, seed=seed)
            thresholds = bedding_down_thresholds(params, seed=seed + 1)
            est = estimate_vitals(generate_bcg(params, 600)[VITALS_CH], thresholds=thresholds)[60:]
            # an absent estimate counts as a miss
            h_err = np.abs(rates(est, "heart_rate_bpm") - hr)
            r_err = np.abs(rates(est, "respiration_rate_bpm") - rr)
            h_frac = np.mean(h_err <= 5)
            mae = np.mean(np.where(np.isnan(h_err), np.inf, h_err))
            r_frac = np.mean(r_err <= 2)
            good = h_frac >= 0.95 and mae <= 2 and r_frac >= 0.90
            ok &= bool(good)
            lines.append(f"{hr}/{rr}: hr {h_frac:.1%} mae {mae:.2f} rr {r_frac:.1%}")
    elapsed = time.perf_counter() - start
    report(4, "vitals recovery on 9 x 10 min synthetic signals", ok and elapsed < 60.0,
           "; ".join(lines) + f"; {elapsed:.1f} s")


def test_criterion_5_noise_free_exactness():
    worst = 0.0
    for hr in (55, 70, 90):
        params = SynthParams(heart_rate_bpm=hr, hr_jitter_pct=0.0, noise_density_ug_per_rthz=0.0)
        cal = bedding_down_params(params, 30, 150)
        thresholds = calibrate_bands(generate_bcg(cal, 150)[VITALS_CH])
        est = estimate_vitals(generate_bcg(params, 180)[VITALS_CH], thresholds=thresholds)[60:]
        err = np.abs(rates(est, "heart_rate_bpm") - hr)
        worst = max(worst, float(np.max(np.where(np.isnan(err), np.inf, err))))
    report(5, "noise-free heart rate exact", worst <= 0.5, f"max error {worst:.3f} bpm")


def test_criterion_6_occupancy():
    ch = SensorChannel.parse("LIS3DHH:X")
    cfg = OccupancyConfig(ch, baseline_mg=0.0, threshold_mg=25.0, debounce_s=2.0)
    step = np.where(np.arange(3000) >= 1000, 50.0, 0.0)
    events = list(transitions(occupancy_trace(AccelSeries(ch, 0, step), cfg)))
    flip_ok = len(events) == 1 and 12_000 <= events[0]["t_ms"] <= 13_000
    spurious = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        x = step + rng.normal(0.0, 50.0 / 6 * 0.99, step.size)
        x[2000:2050] = rng.normal(0.0, 8.0, 50)  # 0.5 s dropout while occupied
        n = len(list(transitions(occupancy_trace(AccelSeries(ch, 0, x), cfg))))
        spurious += n - 1
    flip = events[0]["t_ms"] / 1000 - 10 if events else float("nan")
    report(6, "occupancy step and dropouts", flip_ok and spurious == 0,
           f"flip {flip:.2f} s after step, {spurious} spurious transitions over 100 seeds")


def bcg(*args, **kwargs):
    return subprocess.run([sys.executable, "-m", "bcg", *map(str, args)], check=True,
                          capture_output=True, text=True, **kwargs)


@contextlib.contextmanager
def server(storage, *extra):
    proc = subprocess.Popen([sys.executable, "-m", "bcg", "serve", "--bind", "127.0.0.1:0",
                             "--storage", str(storage), *map(str, extra)],
                            stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True)
    try:
        line = proc.stdout.readline()
        assert line.startswith("listening on"), proc.stderr.read()
        yield int(line.rsplit(":", 1)[1])
    finally:
        proc.send_signal(signal.SIGINT)
        try:
            proc.wait(20)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait()
    assert proc.returncode == 0, proc.stderr.read()


def test_criterion_7_online_offline_equivalence(tmp_path):
    bcg("synth", "-o", tmp_path / "empty.csv", "--duration", 20, "--empty", 20, "--seed", 1)
    bcg("synth", "-o", tmp_path / "occ.csv", "--duration", 20, "--seed", 2)
    bcg("synth", "-o", tmp_path / "bed.csv", "--duration", 150, "--empty", 30, "--seed", 3)
    cal = tmp_path / "cal.jsonl"
    bcg("calibrate", "--empty", tmp_path / "empty.csv", "--occupied", tmp_path / "occ.csv",
        "--calib-signal", tmp_path / "bed.csv", "--sensor-id", "bed1", "-o", cal)
    dump = tmp_path / "run.bcg"
    bcg("synth", "-o", dump, "--duration", 120, "--empty", 20, "--hr", 75, "--seed", 4)

    offline = [json.loads(line) for line in
               bcg("analyze", dump, "--calibration", cal).stdout.splitlines()]
    storage = tmp_path / "sessions"
    with server(storage, "--calibration", cal) as port:
        bcg("emulate", "--target", f"127.0.0.1:{port}", "--sensor-id", "bed1",
            "--input", dump, "--fast")
    (session,) = storage.glob("*.jsonl")
    records = read_session_file(session)
    online = [{"t_ms": r["frame_ts_ms"], "seq": r["seq"], "occupied": r["occupied"],
               "heart_bpm": r["heart_bpm"], "resp_bpm": r["resp_bpm"],
               "provisional": r["provisional"]} for r in records if r["occupied"]]
    empty_ok = all(r["heart_bpm"] is None for r in records if not r["occupied"])
    has_rates = sum(r["heart_bpm"] is not None for r in offline)
    report(7, "emulate --fast into serve equals analyze",
           online == offline and empty_ok and len(records) == 120 and has_rates > 0,
           f"{len(online)} online vs {len(offline)} offline occupied records, "
           f"{has_rates} with a heart rate")


def test_criterion_8_service_robustness(tmp_path):
    n_sessions, duration = 100, 60
    storage = tmp_path / "sessions"
    streams = {f"bed{k:03d}": list(generate_packets(
        SynthParams(heart_rate_bpm=55 + k % 40, seed=k), duration)) for k in range(n_sessions)}
    errors = []
    rejected = {}

    def sensor(sid, packets):
        try:
            emulate("127.0.0.1", port, sid, packets, realtime=True, period_s=1.0)
        except Exception as exc:  # noqa: BLE001 - reported below
            errors.append(f"{sid}: {exc!r}")

    def garbage():
        time.sleep(duration / 2)
        with socket.create_connection(("127.0.0.1", port), timeout=10) as s:
            s.sendall(b"GET / HTTP/1.1\r\n\r\n" + bytes(PACKET_SIZE))
            s.shutdown(socket.SHUT_WR)
            rejected["closed"] = s.recv(1) == b""

    with server(storage) as port:
        threads = [threading.Thread(target=sensor, args=item) for item in streams.items()]
        threads.append(threading.Thread(target=garbage))
        for t in threads:
            t.start()
        for t in threads:
            t.join(duration + 60)

    files = sorted(storage.glob("*.jsonl"))
    complete = 0
    dropped = 0
    for path in files:
        sid = path.name.rsplit("-", 1)[0]
        recs = read_session_file(path)
        seqs = [r["seq"] for r in recs]
        dropped += duration - len(recs) + sum(r["gaps"] for r in recs[-1:])
        complete += (sid in streams and seqs == list(range(duration))
                     and all(r["sensor_id"] == sid for r in recs))
    report(8, "100 concurrent 60 s sessions plus a malformed hello",
           complete == n_sessions and len(files) == n_sessions and dropped == 0
           and not errors and rejected.get("closed", False),
           f"{complete} complete files of {len(files)}, {dropped} dropped records, "
           f"{len(errors)} client errors, malformed session "
           f"{'isolated' if rejected.get('closed') else 'NOT closed'}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
